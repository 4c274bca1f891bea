import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

from trendforge.utils.errors import MissingArtifactError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def canonical_json(payload: Any) -> str:
    """JSON estable: claves ordenadas, indentado, salto de linea final"""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(payload: Dict, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(canonical_json(payload))
    logger.info(f"Archivo guardado: {path} ({path.stat().st_size / 1024:.2f} KB)")
    return path


def read_json(path: PathLike, command: str = "") -> Dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, command)
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def payload_sha256(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()


def require_artifact(path: PathLike, command: str) -> Path:
    """Verifica que exista el artefacto producido por un comando previo"""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, command)
    return path


def format_real(value: float) -> str:
    """Real como cadena decimal de 17 digitos significativos"""
    return format(float(value), '.17g')
