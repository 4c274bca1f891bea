import logging
import os
from typing import Dict, Optional

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def configure_logging(name: str, level: Optional[str] = None) -> logging.Logger:
    """Configura logging del proceso y retorna el logger del comando"""
    level = (level or os.getenv('TRENDFORGE_LOG_LEVEL', 'INFO')).upper()

    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=LOG_FORMAT,
        datefmt=DATE_FORMAT
    )
    logging.getLogger().setLevel(getattr(logging, level, logging.INFO))

    command_logger = logging.getLogger(name)
    command_logger.info(f"Iniciando comando: {name}")

    return command_logger


def log_stage_summary(title: str, summary: Dict, log: Optional[logging.Logger] = None) -> Dict:
    """Registra un bloque resumen con los conteos de una etapa"""
    log = log or logger

    log.info(f"{'='*60}")
    log.info(f"RESUMEN: {title}")
    log.info(f"{'='*60}")
    for key, value in summary.items():
        if isinstance(value, bool):
            log.info(f"  {key}: {value}")
        elif isinstance(value, int):
            log.info(f"  {key}: {value:,}")
        elif isinstance(value, float):
            log.info(f"  {key}: {value:.4f}")
        else:
            log.info(f"  {key}: {value}")
    log.info(f"{'='*60}")

    return summary
