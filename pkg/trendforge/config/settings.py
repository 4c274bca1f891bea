import dataclasses
import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml
from dateutil import parser as date_parser
from dateutil import tz
from dotenv import load_dotenv

from trendforge.models.gbdt import HyperParams
from trendforge.models.logreg import LogRegConfig
from trendforge.utils.artifacts import payload_sha256
from trendforge.utils.errors import ConfigError, TrendForgeError

logger = logging.getLogger(__name__)

# Cargar variables de entorno desde .env
env_path = Path(__file__).parent / '.env'
load_dotenv(dotenv_path=env_path)

DEFAULT_API_BASE = 'https://api.binance.com'

# Top-8 reportado para MA(10, 60) sobre BTCUSDT 15m
REFERENCE_TOP_FEATURES = ('RSI30', 'MACD', 'MOM30', '%D30', '%D200', '%K200', '%K30', 'RSI14')


@dataclass
class ApiConfig:
    """Configuracion del endpoint REST de klines"""
    base_url: str = DEFAULT_API_BASE
    timeout: float = 30.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    page_limit: int = 1000

    @classmethod
    def from_env(cls) -> 'ApiConfig':
        """Carga configuracion desde variables de entorno"""
        return cls(
            base_url=os.getenv('TRENDFORGE_API_BASE', DEFAULT_API_BASE).rstrip('/'),
            timeout=float(os.getenv('TRENDFORGE_HTTP_TIMEOUT', '30')),
        )

    def klines_url(self) -> str:
        return f"{self.base_url}/api/v3/klines"


@dataclass
class DataConfig:
    csv_path: Optional[str] = None
    symbol: str = 'BTCUSDT'
    interval: str = '15m'
    start: str = '2021-02-01T00:00:00Z'
    end: str = '2022-02-01T00:00:00Z'


@dataclass
class FeatureConfig:
    """Periodos por indicador; cada periodo genera una columna"""
    rsi: Tuple[int, ...] = (14, 30, 200)
    mom: Tuple[int, ...] = (10, 30)
    proc: Tuple[int, ...] = (9,)
    ema: Tuple[int, ...] = (10, 30, 200)
    stoch: Tuple[int, ...] = (10, 30, 200)
    bb: Tuple[int, ...] = (20,)
    atr: Tuple[int, ...] = (14,)
    cci: Tuple[int, ...] = (20,)
    willr: Tuple[int, ...] = (14,)
    cmf: Tuple[int, ...] = (20,)
    macd: bool = True
    obv: bool = True
    adl: bool = True
    price_volume: bool = True
    bb_ddof: int = 0


@dataclass
class LabelConfig:
    short: int = 10
    long: int = 60


@dataclass
class SplitConfig:
    p: float = 0.2


@dataclass
class SelectionConfig:
    k: int = 8
    expected: Tuple[str, ...] = REFERENCE_TOP_FEATURES
    enforce_expected: bool = False
    min_overlap: int = 6


@dataclass
class ModelConfig:
    learner: str = 'gbdt'
    baseline_learner: Optional[str] = 'logreg'
    baseline_uses_selected: bool = True


@dataclass
class TuningConfig:
    validation_fraction: float = 0.2
    n_jobs: int = 1
    gbdt_grid: Optional[Dict[str, Any]] = None
    logreg_grid: Optional[Dict[str, Any]] = None


@dataclass
class LoggingConfig:
    level: str = 'INFO'


@dataclass
class RunConfig:
    """Configuracion completa de una corrida (archivo TOML/YAML + flags)"""
    data: DataConfig = field(default_factory=DataConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    labels: LabelConfig = field(default_factory=LabelConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    gbdt: HyperParams = field(default_factory=HyperParams)
    logreg: LogRegConfig = field(default_factory=LogRegConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    seed: int = 42
    output_dir: str = 'artifacts'

    @classmethod
    def from_file(cls, path) -> 'RunConfig':
        """Carga configuracion desde TOML o YAML segun la extension"""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Archivo de configuracion no encontrado: {path}")

        try:
            if path.suffix.lower() == '.toml':
                with open(path, 'rb') as handle:
                    raw = tomllib.load(handle)
            elif path.suffix.lower() in ('.yaml', '.yml'):
                with open(path, 'r', encoding='utf-8') as handle:
                    raw = yaml.safe_load(handle) or {}
            else:
                raise ConfigError(f"Formato no soportado: {path.suffix}")
        except (tomllib.TOMLDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"Archivo de configuracion invalido: {e}") from e

        logger.info(f"Configuracion cargada: {path}")
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> 'RunConfig':
        if not isinstance(raw, dict):
            raise ConfigError("La configuracion debe ser una tabla")

        sections = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in sections:
                raise ConfigError("clave desconocida", key)
            section_type = _section_type(cls, key)
            if section_type is None:
                kwargs[key] = _check_scalar(key, value, sections[key].default)
            else:
                if key == 'gbdt' and isinstance(value, dict) and 'seed' in value:
                    raise ConfigError("usar la semilla global 'seed'", 'gbdt.seed')
                kwargs[key] = _build_section(section_type, value, key)

        config = cls(**kwargs)
        config.gbdt = dataclasses.replace(config.gbdt, seed=int(config.seed))
        config.validate()
        return config

    def to_dict(self) -> Dict[str, Any]:
        return _to_plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        return payload_sha256(self.to_dict())

    def apply_overrides(self, overrides: Dict[str, Any]) -> 'RunConfig':
        """Aplica flags de linea de comandos (rutas punteadas) sobre la configuracion"""
        raw = self.to_dict()
        raw['gbdt'].pop('seed', None)
        for dotted, value in overrides.items():
            if value is None:
                continue
            target = raw
            parts = dotted.split('.')
            for part in parts[:-1]:
                target = target.setdefault(part, {})
            target[parts[-1]] = value
        return RunConfig.from_dict(raw)

    def validate(self) -> None:
        if not 0 < self.split.p < 1:
            raise ConfigError("debe cumplir 0 < p < 1", 'split.p')
        if self.labels.short < 1 or self.labels.short >= self.labels.long:
            raise ConfigError("se requiere 1 <= short < long", 'labels')
        if self.selection.k < 1:
            raise ConfigError("debe ser >= 1", 'selection.k')
        if self.model.learner not in ('gbdt', 'logreg'):
            raise ConfigError(f"learner desconocido: {self.model.learner}", 'model.learner')
        if self.model.baseline_learner not in (None, 'gbdt', 'logreg'):
            raise ConfigError(f"learner desconocido: {self.model.baseline_learner}",
                              'model.baseline_learner')
        if self.features.bb_ddof not in (0, 1):
            raise ConfigError("debe ser 0 o 1", 'features.bb_ddof')
        if not 0 < self.tuning.validation_fraction < 1:
            raise ConfigError("debe cumplir 0 < fraccion < 1", 'tuning.validation_fraction')
        if self.logging.level.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ConfigError(f"nivel desconocido: {self.logging.level}", 'logging.level')
        if self.data.csv_path and not Path(self.data.csv_path).exists():
            raise ConfigError(f"archivo no encontrado: {self.data.csv_path}", 'data.csv_path')
        try:
            self.gbdt.validate()
            self.logreg.validate()
        except TrendForgeError as e:
            raise ConfigError(str(e), 'gbdt/logreg') from e

    def paths(self) -> Dict[str, Path]:
        """Rutas de los artefactos de cada comando"""
        out = Path(self.output_dir)
        return {
            'candles': Path(self.data.csv_path) if self.data.csv_path else out / 'candles.csv',
            'features': out / 'features.csv',
            'selection': out / 'selection.csv',
            'split': out / 'split.json',
            'scaler': out / 'scaler.json',
            'model': out / 'model.json',
            'baseline': out / 'baseline.json',
            'train_curves': out / 'train_curves.csv',
            'tune_log': out / 'tune_log.csv',
            'tune_best': out / 'tune_best.json',
            'report': out / 'report.json',
            'roc': out / 'roc.csv',
            'curves': out / 'curves.csv',
            'baseline_report': out / 'baseline_report.json',
            'baseline_roc': out / 'baseline_roc.csv',
            'importance': out / 'feature_importance.csv',
            'comparison': out / 'comparison.csv',
            'charts': out / 'charts',
        }


def parse_time_bound(value) -> int:
    """Convierte fecha ISO (UTC por defecto) o epoch-ms a epoch-ms"""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return int(value)
    text = str(value).strip()
    if text.lstrip('-').isdigit():
        return int(text)
    try:
        moment = date_parser.isoparse(text)
    except ValueError as e:
        raise ConfigError(f"fecha invalida: {text}") from e
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=tz.UTC)
    return int(round(moment.timestamp() * 1000))


def _section_type(cls, name: str):
    hints = {
        'data': DataConfig, 'features': FeatureConfig, 'labels': LabelConfig,
        'split': SplitConfig, 'selection': SelectionConfig, 'model': ModelConfig,
        'gbdt': HyperParams, 'logreg': LogRegConfig, 'tuning': TuningConfig,
        'logging': LoggingConfig,
    }
    return hints.get(name)


def _check_scalar(path: str, value: Any, default: Any) -> Any:
    """Claves de primer nivel: seed entero, output_dir texto"""
    if isinstance(default, int) and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"debe ser entero, recibido {value!r}", path)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"debe ser texto, recibido {value!r}", path)
    return value


def _build_section(section_type, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise ConfigError("debe ser una tabla", path)

    known = {f.name: f for f in dataclasses.fields(section_type)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError("clave desconocida", f"{path}.{key}")
        default = known[key].default
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        elif isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError("debe ser booleano", f"{path}.{key}")
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("debe ser numerico", f"{path}.{key}")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigError("debe ser entero", f"{path}.{key}")
        kwargs[key] = value
    try:
        return section_type(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e), path) from e


def _to_plain(value):
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    return value
