"""Regresion logistica regularizada (linea base) por gradiente proximal.

Objetivo minimizado sobre m filas de entrenamiento:

    (1/m) * sum(logloss) + (1/(C*m)) * R(w)

con R = sum|w| (l1), 0.5*||w||^2 (l2), su mezcla (elasticnet) o 0 (none).
El intercepto no se penaliza.
"""
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from trendforge.evaluate.metrics import PROBA_EPS
from trendforge.utils.artifacts import format_real, read_json, write_json
from trendforge.utils.errors import ParameterError, SchemaVersionError, SingleClassError

if TYPE_CHECKING:
    from trendforge.transform.pipeline import FeatureFrame, SplitIndices

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 'trendforge_logreg_v1'
PENALTIES = ('l1', 'l2', 'elasticnet', 'none')


@dataclass
class LogRegConfig:
    penalty: str = 'l1'
    C: float = 0.1
    max_iter: int = 100
    tol: float = 1e-8
    l1_ratio: float = 0.5

    def validate(self) -> 'LogRegConfig':
        if self.penalty not in PENALTIES:
            raise ParameterError(f"penalty desconocida: {self.penalty} (opciones: {PENALTIES})")
        if not self.C > 0:
            raise ParameterError(f"C debe ser > 0, recibido {self.C}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ParameterError(f"max_iter debe ser entero >= 1, recibido {self.max_iter}")
        if self.tol < 0:
            raise ParameterError(f"tol debe ser >= 0, recibido {self.tol}")
        if not 0 <= self.l1_ratio <= 1:
            raise ParameterError(f"l1_ratio debe estar en [0, 1], recibido {self.l1_ratio}")
        return self

    def to_dict(self) -> Dict:
        return {
            'penalty': self.penalty,
            'C': float(self.C),
            'max_iter': int(self.max_iter),
            'tol': float(self.tol),
            'l1_ratio': float(self.l1_ratio),
        }

    def penalty_weights(self) -> Tuple[float, float]:
        """(peso L1, peso L2) de R(w)"""
        return {
            'l1': (1.0, 0.0),
            'l2': (0.0, 1.0),
            'elasticnet': (self.l1_ratio, 1.0 - self.l1_ratio),
            'none': (0.0, 0.0),
        }[self.penalty]


@dataclass(eq=False)
class LinearModel:
    weights: np.ndarray
    intercept: float
    config: LogRegConfig
    feature_names: Tuple[str, ...] = ()
    objective_history: List[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def penalty(self) -> str:
        return self.config.penalty

    @property
    def C(self) -> float:
        return self.config.C

    @property
    def max_iter(self) -> int:
        return self.config.max_iter


# ==================== OBJETIVO ====================

def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over='ignore'):
        return 1.0 / (1.0 + np.exp(-z))


def smooth_loss(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray) -> float:
    """Log loss media, estable para margenes grandes"""
    z = X @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def smooth_gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, float]:
    residual = _sigmoid(X @ w + b) - y
    return X.T @ residual / len(y), float(residual.mean())


def penalty_value(w: np.ndarray, config: LogRegConfig, m: int) -> float:
    l1, l2 = config.penalty_weights()
    return (l1 * np.abs(w).sum() + l2 * 0.5 * np.dot(w, w)) / (config.C * m)


def objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, config: LogRegConfig) -> float:
    return smooth_loss(w, b, X, y) + penalty_value(w, config, len(y))


def _prox(v: np.ndarray, step: float, config: LogRegConfig, m: int) -> np.ndarray:
    """Operador proximal de step * R(w) / (C*m)"""
    l1, l2 = config.penalty_weights()
    scale = step / (config.C * m)
    shrunk = np.sign(v) * np.maximum(np.abs(v) - scale * l1, 0.0)
    return shrunk / (1.0 + scale * l2)


# ==================== AJUSTE ====================

def fit_matrix(X: np.ndarray, y: np.ndarray, config: LogRegConfig,
               feature_names: Optional[Sequence[str]] = None) -> LinearModel:
    """ISTA con busqueda de paso por backtracking"""
    config.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = X.shape
    if len(np.unique(y)) < 2:
        raise SingleClassError("Regresion logistica requiere ambas clases en train")

    w = np.zeros(n)
    b = 0.0
    step = 1.0
    current = objective(w, b, X, y, config)
    history = [current]
    n_iter = 0

    for n_iter in range(1, int(config.max_iter) + 1):
        grad_w, grad_b = smooth_gradient(w, b, X, y)
        base_loss = smooth_loss(w, b, X, y)

        while True:
            w_new = _prox(w - step * grad_w, step, config, m)
            b_new = b - step * grad_b
            dw, db = w_new - w, b_new - b
            # cota cuadratica de la parte suave
            bound = base_loss + np.dot(grad_w, dw) + grad_b * db + (np.dot(dw, dw) + db * db) / (2.0 * step)
            if smooth_loss(w_new, b_new, X, y) <= bound + 1e-15 or step < 1e-12:
                break
            step *= 0.5

        candidate = objective(w_new, b_new, X, y, config)
        if candidate > current:
            # paso minimo sin descenso: se detiene sin aceptar el punto
            break
        decrease = current - candidate
        w, b, current = w_new, b_new, candidate
        history.append(current)
        if decrease < config.tol:
            break

    logger.info(f"  Regresion logistica ({config.penalty}, C={config.C}): {n_iter} iteraciones, "
                f"objetivo={current:.6f}, pesos nulos={int((w == 0).sum())}/{n}")

    return LinearModel(
        weights=w,
        intercept=float(b),
        config=config,
        feature_names=tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(n)),
        objective_history=history,
        n_iter=n_iter,
    )


def fit_logreg(frame: 'FeatureFrame', split: 'SplitIndices', config: LogRegConfig) -> LinearModel:
    train_frame = frame.rows(split.train)
    logger.info(f"Entrenando regresion logistica sobre {train_frame.m:,} filas x {train_frame.n} features")
    return fit_matrix(train_frame.matrix, train_frame.labels, config, train_frame.columns)


def _design_matrix(model: LinearModel, data) -> np.ndarray:
    features = getattr(data, 'features', data)
    if hasattr(features, 'columns'):
        missing = [name for name in model.feature_names if name not in features.columns]
        if missing:
            raise ParameterError(f"Columnas ausentes para el modelo: {missing}")
        return features[list(model.feature_names)].to_numpy(dtype=np.float64)

    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != len(model.weights):
        raise ParameterError(f"Dimension {X.shape[1]} distinta de {len(model.weights)} pesos del modelo")
    return X


def predict_logreg(model: LinearModel, data) -> np.ndarray:
    """sigmoid(w.x + b) acotada a [eps, 1 - eps]"""
    X = _design_matrix(model, data)
    return np.clip(_sigmoid(X @ model.weights + model.intercept), PROBA_EPS, 1.0 - PROBA_EPS)


def predict_logreg_label(model: LinearModel, data) -> np.ndarray:
    return (predict_logreg(model, data) >= 0.5).astype(np.int8)


# ==================== SERIALIZACION ====================

def serialize(model: LinearModel, metadata: Optional[Dict] = None) -> Dict:
    return {
        'schema': SCHEMA_VERSION,
        'weights': [format_real(v) for v in model.weights],
        'intercept': format_real(model.intercept),
        'feature_names': list(model.feature_names),
        'config': model.config.to_dict(),
        'n_iter': int(model.n_iter),
        'metadata': dict(metadata or {}),
    }


def deserialize(document: Dict) -> LinearModel:
    schema = document.get('schema')
    if schema != SCHEMA_VERSION:
        raise SchemaVersionError(f"Esquema de modelo no soportado: {schema} (se espera {SCHEMA_VERSION})")
    return LinearModel(
        weights=np.array([float(v) for v in document['weights']], dtype=np.float64),
        intercept=float(document['intercept']),
        config=LogRegConfig(**document['config']),
        feature_names=tuple(document['feature_names']),
        n_iter=int(document.get('n_iter', 0)),
    )


def save_model(model: LinearModel, path, metadata: Optional[Dict] = None):
    return write_json(serialize(model, metadata), path)


def load_model(path, command: str = 'train') -> LinearModel:
    return deserialize(read_json(path, command))
