"""Construccion de la matriz de features, particion temporal, escalado y seleccion χ².

Flujo:
    1. build_frame: indicadores + etiqueta MA, recorte del calentamiento
    2. time_split: train = [0, t_test_start), test = [t_test_start, m)
    3. fit_scaler / transform: estandarizacion con estadisticos de train
    4. chi2_scores / select: top-k columnas por χ² sobre train
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from trendforge.transform.indicators import compute_indicator_table, expected_lookbacks
from trendforge.transform.labeling import (
    decode_binary,
    encode_binary,
    ma_crossover_labels,
    signal_counts,
)
from trendforge.utils.artifacts import write_json
from trendforge.utils.errors import (
    DataError,
    EmptyInputError,
    InsufficientDataError,
    ParameterError,
    ParseError,
    SingleClassError,
    ZeroVarianceError,
)
from trendforge.utils.logging_utils import log_stage_summary

if TYPE_CHECKING:
    from trendforge.config.settings import FeatureConfig, LabelConfig
    from trendforge.extract.market_data import CandleSeries

logger = logging.getLogger(__name__)

TIME_COLUMN = 'open_time'
LABEL_COLUMN = 'Signal'


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    """Matriz X (m x n) con marcas de tiempo y etiquetas binarias (1 = Buy, 0 = Sell)"""
    timestamps: np.ndarray
    features: pd.DataFrame
    labels: np.ndarray

    def __post_init__(self):
        m = len(self.features)
        if len(self.timestamps) != m or len(self.labels) != m:
            raise DataError(
                f"Longitudes inconsistentes: timestamps={len(self.timestamps)}, "
                f"features={m}, labels={len(self.labels)}"
            )
        if self.features.columns.duplicated().any():
            duplicated = list(self.features.columns[self.features.columns.duplicated()])
            raise DataError(f"Columnas duplicadas: {duplicated}")
        if self.features.isna().to_numpy().any():
            column = self.features.columns[self.features.isna().any()].tolist()[0]
            raise DataError(f"Valores indefinidos en la columna {column}")
        if m and not np.isin(self.labels, (0, 1)).all():
            raise DataError("Las etiquetas deben ser binarias (0/1)")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def m(self) -> int:
        return len(self.features)

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def columns(self) -> List[str]:
        return list(self.features.columns)

    @property
    def matrix(self) -> np.ndarray:
        return self.features.to_numpy(dtype=np.float64)

    def rows(self, rows: slice) -> 'FeatureFrame':
        return FeatureFrame(
            timestamps=self.timestamps[rows].copy(),
            features=self.features.iloc[rows].reset_index(drop=True),
            labels=self.labels[rows].copy(),
        )

    def with_features(self, features: pd.DataFrame) -> 'FeatureFrame':
        return FeatureFrame(self.timestamps.copy(), features.reset_index(drop=True), self.labels.copy())

    def to_csv(self, path) -> Path:
        """features.csv: open_time primero, Signal (+1/-1) al final"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        output = self.features.copy()
        output.insert(0, TIME_COLUMN, self.timestamps.astype(np.int64))
        output[LABEL_COLUMN] = decode_binary(self.labels)
        output.to_csv(path, index=False, lineterminator='\n')

        logger.info(f"Archivo guardado: {path} ({self.m:,} filas x {self.n} features)")
        return path


def read_feature_csv(path) -> FeatureFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Archivo no encontrado: {path}")

    df = pd.read_csv(path)
    if df.empty:
        raise EmptyInputError(f"Archivo vacio: {path}")
    if df.columns[0] != TIME_COLUMN or df.columns[-1] != LABEL_COLUMN:
        raise ParseError(f"{path.name} debe iniciar con {TIME_COLUMN} y terminar con {LABEL_COLUMN}")

    signal = df[LABEL_COLUMN].to_numpy()
    invalid = ~np.isin(signal, (1, -1))
    if invalid.any():
        raise ParseError("Signal debe ser +1 o -1", row=int(np.argmax(invalid)) + 2)

    features = df.drop(columns=[TIME_COLUMN, LABEL_COLUMN]).astype(np.float64)
    return FeatureFrame(
        timestamps=df[TIME_COLUMN].to_numpy(dtype=np.int64),
        features=features,
        labels=encode_binary(signal),
    )


# ==================== CONSTRUCCION ====================

def build_frame(candles: 'CandleSeries', features: 'FeatureConfig', labels: 'LabelConfig') -> FeatureFrame:
    """Calcula indicadores y etiqueta, y recorta las filas de calentamiento"""
    n_bars = len(candles)
    label_name = f"Signal MA({labels.short},{labels.long})"

    logger.info("Fase 1: Verificacion de calentamiento")
    lookbacks = expected_lookbacks(features)
    lookbacks[label_name] = labels.long - 1
    _check_warmup(lookbacks, n_bars)

    logger.info("Fase 2: Calculo de indicadores")
    table = compute_indicator_table(candles, features)
    label_column = ma_crossover_labels(candles.close, labels.short, labels.long)

    warmup = max([column.lookback for column in table.values()] + [label_column.lookback])
    binding = max(table.values(), key=lambda column: column.lookback).name
    if label_column.lookback > table[binding].lookback:
        binding = label_name

    logger.info(f"Fase 3: Recorte de {warmup:,} filas de calentamiento (columna limitante: {binding})")
    matrix = pd.DataFrame({name: column.values[warmup:] for name, column in table.items()})
    frame = FeatureFrame(
        timestamps=candles.open_time[warmup:],
        features=matrix,
        labels=encode_binary(label_column.values[warmup:]),
    )

    counts = signal_counts(decode_binary(frame.labels))
    log_stage_summary('CONSTRUCCION DE FEATURES', {
        'velas de entrada': n_bars,
        'calentamiento': warmup,
        'columna limitante': binding,
        'filas (m)': frame.m,
        'features (n)': frame.n,
        'senales Buy': counts['buy'],
        'senales Sell': counts['sell'],
    }, logger)
    return frame


def _check_warmup(lookbacks: Dict[str, int], n_bars: int) -> None:
    failing = {name: lookback for name, lookback in lookbacks.items() if lookback >= n_bars}
    if not failing:
        return

    binding = max(failing, key=failing.get)
    required = failing[binding] + 1
    others = ', '.join(f"{name}({lookback + 1})" for name, lookback in failing.items() if name != binding)
    message = f"{binding} requiere al menos {required:,} barras, disponibles {n_bars:,}"
    if others:
        message += f"; tambien insuficientes: {others}"
    raise InsufficientDataError(binding, required, n_bars, message)


# ==================== PARTICION ====================

@dataclass(frozen=True)
class SplitIndices:
    train_end: int
    test_start: int
    p: float
    m: int

    @property
    def train(self) -> slice:
        return slice(0, self.train_end)

    @property
    def test(self) -> slice:
        return slice(self.test_start, self.m)

    @property
    def n_train(self) -> int:
        return self.train_end

    @property
    def n_test(self) -> int:
        return self.m - self.test_start

    def to_dict(self) -> Dict:
        return {'m': self.m, 'p': self.p, 'train_end': self.train_end, 'test_start': self.test_start}

    @classmethod
    def from_dict(cls, raw: Dict) -> 'SplitIndices':
        return cls(int(raw['train_end']), int(raw['test_start']), float(raw['p']), int(raw['m']))


def time_split(frame, p: float = 0.2) -> SplitIndices:
    """t_test_start = floor((1 - p) * m); train y test contiguos, sin solapamiento"""
    m = frame if isinstance(frame, int) else len(frame)
    if not 0 < p < 1:
        raise ParameterError(f"p debe cumplir 0 < p < 1, recibido {p}")
    if m < 2:
        raise ParameterError(f"Se requieren al menos 2 filas para particionar, disponibles {m}")

    # tolerancia para productos como 0.8 * 34840 = 27872.000000000004
    test_start = int(math.floor((1.0 - p) * m + 1e-9))
    if test_start <= 0 or test_start >= m:
        raise ParameterError(f"p={p} deja un conjunto vacio con m={m:,}")

    split = SplitIndices(train_end=test_start, test_start=test_start, p=float(p), m=m)
    logger.info(f"Particion temporal: train={split.n_train:,}, test={split.n_test:,} (p={p})")
    return split


# ==================== ESCALADO ====================

@dataclass(frozen=True, eq=False)
class ScalerParams:
    columns: Tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> Dict:
        return {
            'columns': list(self.columns),
            'mean': [float(v) for v in self.mean],
            'std': [float(v) for v in self.std],
        }

    @classmethod
    def from_dict(cls, raw: Dict) -> 'ScalerParams':
        return cls(
            columns=tuple(raw['columns']),
            mean=np.asarray(raw['mean'], dtype=np.float64),
            std=np.asarray(raw['std'], dtype=np.float64),
        )

    def _positions(self, columns: Iterable[str]) -> List[int]:
        index = {name: i for i, name in enumerate(self.columns)}
        unknown = [name for name in columns if name not in index]
        if unknown:
            raise ParameterError(f"Columnas sin parametros de escalado: {unknown}")
        return [index[name] for name in columns]


def fit_scaler(frame: FeatureFrame, split: SplitIndices) -> ScalerParams:
    """Media y desviacion poblacional por columna, solo sobre filas de train"""
    if split.n_train < 1:
        raise ParameterError("Conjunto de entrenamiento vacio")

    train = frame.matrix[split.train]
    mean = train.mean(axis=0)
    std = train.std(axis=0, ddof=0)

    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if flat.any():
        names = [frame.columns[i] for i in np.flatnonzero(flat)]
        logger.warning(f"  Columnas con varianza cero en train: {names}")
        raise ZeroVarianceError(names[0])

    return ScalerParams(columns=tuple(frame.columns), mean=mean, std=std)


def transform(frame: FeatureFrame, params: ScalerParams) -> FeatureFrame:
    """x' = (x - mu) / sigma; etiquetas sin cambios"""
    positions = params._positions(frame.columns)
    scaled = (frame.matrix - params.mean[positions]) / params.std[positions]
    return frame.with_features(pd.DataFrame(scaled, columns=frame.columns))


def inverse_transform(frame: FeatureFrame, params: ScalerParams) -> FeatureFrame:
    positions = params._positions(frame.columns)
    restored = params.mean[positions] + params.std[positions] * frame.matrix
    return frame.with_features(pd.DataFrame(restored, columns=frame.columns))


# ==================== SELECCION χ² ====================

@dataclass(frozen=True, eq=False)
class SelectionResult:
    scores: pd.Series
    selected: Tuple[str, ...]

    @property
    def k(self) -> int:
        return len(self.selected)

    def to_frame(self) -> pd.DataFrame:
        """Reporte (feature, chi2_score, selected_flag) ordenado por score descendente"""
        order = np.argsort(-self.scores.to_numpy(), kind='stable')
        ranked = self.scores.iloc[order]
        chosen = set(self.selected)
        return pd.DataFrame({
            'feature': ranked.index,
            'chi2_score': ranked.to_numpy(),
            'selected_flag': [int(name in chosen) for name in ranked.index],
        })


def chi2_scores(frame: FeatureFrame, split: SplitIndices, k: int = 8) -> SelectionResult:
    """χ² = Σ_c (O_c - E_c)² / E_c sobre columnas min-max reescaladas en train"""
    if k < 1 or k > frame.n:
        raise ParameterError(f"k debe cumplir 1 <= k <= {frame.n}, recibido {k}")

    X = frame.matrix[split.train]
    y = frame.labels[split.train]
    if len(np.unique(y)) < 2:
        raise SingleClassError("Las etiquetas de entrenamiento tienen una sola clase")

    low = X.min(axis=0)
    spread = X.max(axis=0) - low
    with np.errstate(divide='ignore', invalid='ignore'):
        scaled = np.where(spread > 0, (X - low) / spread, 0.0)

    Y = np.column_stack([y == 0, y == 1]).astype(np.float64)
    observed = Y.T @ scaled
    class_prob = Y.mean(axis=0)
    feature_count = scaled.sum(axis=0)
    expected = np.outer(class_prob, feature_count)

    with np.errstate(divide='ignore', invalid='ignore'):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    scores = pd.Series(terms.sum(axis=0), index=frame.columns, name='chi2_score')

    # empates: gana el menor indice de columna
    order = np.argsort(-scores.to_numpy(), kind='stable')
    selected = tuple(frame.columns[i] for i in order[:k])

    logger.info(f"Seleccion χ²: top-{k} = {list(selected)}")
    return SelectionResult(scores=scores, selected=selected)


def select(frame: FeatureFrame, result: SelectionResult) -> FeatureFrame:
    missing = [name for name in result.selected if name not in frame.features.columns]
    if missing:
        raise ParameterError(f"Columnas seleccionadas ausentes: {missing}")
    return frame.with_features(frame.features[list(result.selected)])


def compare_selection(selected: Iterable[str], expected: Iterable[str], min_overlap: int = 6) -> Dict:
    """Compara la seleccion obtenida con un conjunto de referencia"""
    selected, expected = list(selected), list(expected)
    overlap = [name for name in selected if name in expected]
    comparison = {
        'overlap': len(overlap),
        'missing': [name for name in expected if name not in selected],
        'extra': [name for name in selected if name not in expected],
        'matches': len(overlap) >= min_overlap,
    }
    if not comparison['matches']:
        logger.warning(
            f"  Seleccion con {len(overlap)} coincidencias (minimo {min_overlap}): "
            f"faltan {comparison['missing']}, sobran {comparison['extra']}"
        )
    return comparison


# ==================== ARTEFACTOS ====================

def write_selection_report(result: SelectionResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.to_frame().to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Archivo guardado: {path}")
    return path


def read_selection_report(path) -> SelectionResult:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Archivo no encontrado: {path}")
    df = pd.read_csv(path)
    if not {'feature', 'chi2_score', 'selected_flag'} <= set(df.columns):
        raise ParseError(f"{path.name} sin columnas feature/chi2_score/selected_flag")
    scores = pd.Series(df['chi2_score'].to_numpy(dtype=np.float64), index=df['feature'], name='chi2_score')
    selected = tuple(df.loc[df['selected_flag'] == 1, 'feature'])
    return SelectionResult(scores=scores, selected=selected)


def write_split_manifest(split: SplitIndices, path, extra: Optional[Dict] = None) -> Path:
    payload = split.to_dict()
    payload.update(extra or {})
    return write_json(payload, path)
