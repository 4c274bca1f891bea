"""Arboles de regresion con gradient boosting para clasificacion binaria.

Cada ronda ajusta un arbol a gradientes y hessianos de la log loss con
busqueda exacta (greedy) de splits. Las hojas usan el minimizador del objetivo
regularizado por hoja:

    w = -T_alpha(G) / (H + lambda),   T_alpha(G) = sign(G) * max(|G| - alpha, 0)

y la ganancia de un split descuenta gamma por hoja adicional.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from trendforge.evaluate.metrics import PROBA_EPS, logloss
from trendforge.utils.artifacts import format_real, read_json, write_json
from trendforge.utils.errors import ParameterError, SchemaVersionError, SingleClassError
from trendforge.utils.logging_utils import log_stage_summary

if TYPE_CHECKING:
    from trendforge.transform.pipeline import FeatureFrame, SplitIndices

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 'trendforge_gbdt_v1'
LOG_EVERY = 50


@dataclass
class HyperParams:
    """Parametros del ensamble; los valores por defecto reproducen la corrida de referencia"""
    n_estimators: int = 400       # N
    eta: float = 0.1              # tasa de aprendizaje
    max_depth: int = 4            # D_max
    min_child_weight: float = 3.0  # W_min, suma minima de hessianos por hijo
    subsample: float = 0.8        # S, fraccion de filas por arbol
    colsample: float = 1.0        # C, fraccion de columnas por arbol
    gamma: float = 0.1
    alpha: float = 0.5            # L1 sobre pesos de hoja
    reg_lambda: float = 1.0       # L2 sobre pesos de hoja
    seed: int = 42

    def validate(self) -> 'HyperParams':
        if isinstance(self.n_estimators, bool) or int(self.n_estimators) != self.n_estimators or self.n_estimators < 1:
            raise ParameterError(f"n_estimators debe ser entero >= 1, recibido {self.n_estimators}")
        if not 0 < self.eta <= 1:
            raise ParameterError(f"eta debe cumplir 0 < eta <= 1, recibido {self.eta}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ParameterError(f"max_depth debe ser entero >= 1, recibido {self.max_depth}")
        if not 0 < self.subsample <= 1:
            raise ParameterError(f"subsample debe cumplir 0 < S <= 1, recibido {self.subsample}")
        if not 0 < self.colsample <= 1:
            raise ParameterError(f"colsample debe cumplir 0 < C <= 1, recibido {self.colsample}")
        for name in ('min_child_weight', 'gamma', 'alpha', 'reg_lambda'):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} debe ser >= 0, recibido {getattr(self, name)}")
        return self

    def to_dict(self) -> Dict:
        return {
            'n_estimators': int(self.n_estimators),
            'eta': float(self.eta),
            'max_depth': int(self.max_depth),
            'min_child_weight': float(self.min_child_weight),
            'subsample': float(self.subsample),
            'colsample': float(self.colsample),
            'gamma': float(self.gamma),
            'alpha': float(self.alpha),
            'reg_lambda': float(self.reg_lambda),
            'seed': int(self.seed),
        }


@dataclass(eq=False)
class TreeNode:
    """Nodo interno (feature, threshold, left, right) u hoja (weight).

    Enrutamiento: valor < threshold va a la izquierda.
    """
    weight: float = 0.0
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional['TreeNode'] = None
    right: Optional['TreeNode'] = None
    gain: float = 0.0
    cover: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0], dtype=np.float64)
        self._route(X, np.arange(X.shape[0]), out)
        return out

    def _route(self, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
        if self.is_leaf:
            out[rows] = self.weight
            return
        goes_left = X[rows, self.feature] < self.threshold
        self.left._route(X, rows[goes_left], out)
        self.right._route(X, rows[~goes_left], out)

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves() + self.right.n_leaves()

    def walk(self, depth: int = 0):
        """Recorre (nodo, profundidad) en preorden"""
        yield self, depth
        if not self.is_leaf:
            yield from self.left.walk(depth + 1)
            yield from self.right.walk(depth + 1)

    def to_dict(self) -> Dict:
        if self.is_leaf:
            return {'leaf': format_real(self.weight), 'cover': format_real(self.cover)}
        return {
            'feature': int(self.feature),
            'threshold': format_real(self.threshold),
            'gain': format_real(self.gain),
            'cover': format_real(self.cover),
            'left': self.left.to_dict(),
            'right': self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: Dict) -> 'TreeNode':
        if 'leaf' in raw:
            return cls(weight=float(raw['leaf']), cover=float(raw.get('cover', '0')))
        return cls(
            feature=int(raw['feature']),
            threshold=float(raw['threshold']),
            gain=float(raw.get('gain', '0')),
            cover=float(raw.get('cover', '0')),
            left=cls.from_dict(raw['left']),
            right=cls.from_dict(raw['right']),
        )


# ==================== OBJETIVO ====================

def sigmoid(margin):
    with np.errstate(over='ignore'):
        return 1.0 / (1.0 + np.exp(-np.asarray(margin, dtype=np.float64)))


def logistic_grad_hess(y, margin) -> Tuple[np.ndarray, np.ndarray]:
    """g = p - y, h = p(1 - p) con p acotada a [eps, 1 - eps]"""
    p = np.clip(sigmoid(margin), PROBA_EPS, 1.0 - PROBA_EPS)
    y = np.asarray(y, dtype=np.float64)
    return p - y, p * (1.0 - p)


def soft_threshold(G, alpha: float):
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def _score(G, H, params: HyperParams):
    """T_alpha(G)^2 / (H + lambda); cero si el denominador es nulo"""
    denominator = np.asarray(H, dtype=np.float64) + params.reg_lambda
    numerator = soft_threshold(G, params.alpha) ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(denominator > 0, numerator / denominator, 0.0)


def leaf_weight(G: float, H: float, params: HyperParams) -> float:
    denominator = H + params.reg_lambda
    if denominator <= 0:
        return 0.0
    return float(-soft_threshold(G, params.alpha) / denominator)


def split_gain(G_L, H_L, G_R, H_R, params: HyperParams):
    gain = 0.5 * (
        _score(G_L, H_L, params) + _score(G_R, H_R, params)
        - _score(np.asarray(G_L) + G_R, np.asarray(H_L) + H_R, params)
    ) - params.gamma
    return float(gain) if np.ndim(gain) == 0 else gain


# ==================== CONSTRUCCION DE ARBOLES ====================

def _best_split(X: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray,
                cols: Sequence[int], params: HyperParams) -> Optional[Tuple[int, float, float]]:
    """Mejor (columna, threshold, ganancia) entre splits validos, o None"""
    G = g[rows].sum()
    H = h[rows].sum()
    best = None

    for col in cols:
        x = X[rows, col]
        order = np.argsort(x, kind='stable')
        xs = x[order]
        distinct = np.flatnonzero(xs[:-1] < xs[1:])
        if len(distinct) == 0:
            continue

        G_L = np.cumsum(g[rows][order])[distinct]
        H_L = np.cumsum(h[rows][order])[distinct]
        H_R = H - H_L
        valid = (H_L >= params.min_child_weight) & (H_R >= params.min_child_weight)
        if not valid.any():
            continue

        gains = split_gain(G_L, H_L, G - G_L, H_R, params)
        gains = np.where(valid, gains, -np.inf)
        position = int(np.argmax(gains))
        if best is None or gains[position] > best[2]:
            i = distinct[position]
            threshold = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] < threshold:
                threshold = xs[i + 1]
            best = (int(col), float(threshold), float(gains[position]))

    return best


def build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray,
               cols: Sequence[int], params: HyperParams, depth: int = 0) -> TreeNode:
    """Busqueda exacta: cada columna se ordena y se evaluan thresholds en puntos medios"""
    rows = np.asarray(rows)
    if len(rows) == 0:
        raise ParameterError("build_tree requiere al menos una fila")

    G = float(g[rows].sum())
    H = float(h[rows].sum())
    leaf = TreeNode(weight=leaf_weight(G, H, params), cover=H)
    if depth >= params.max_depth:
        return leaf

    best = _best_split(X, g, h, rows, cols, params)
    if best is None or best[2] <= 0:
        return leaf

    feature, threshold, gain = best
    goes_left = X[rows, feature] < threshold
    return TreeNode(
        feature=feature,
        threshold=threshold,
        gain=gain,
        cover=H,
        left=build_tree(X, g, h, rows[goes_left], cols, params, depth + 1),
        right=build_tree(X, g, h, rows[~goes_left], cols, params, depth + 1),
    )


# ==================== ENSAMBLE ====================

@dataclass(eq=False)
class BoostedModel:
    trees: List[TreeNode]
    eta: float
    feature_names: Tuple[str, ...]
    params: HyperParams
    base_margin: float = 0.0
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def truncated(self, n_trees: int) -> 'BoostedModel':
        return BoostedModel(self.trees[:n_trees], self.eta, self.feature_names, self.params, self.base_margin)


def _design_matrix(model, data) -> np.ndarray:
    """Matriz en el orden de features del modelo (FeatureFrame, DataFrame o array)"""
    features = getattr(data, 'features', data)
    if isinstance(features, pd.DataFrame):
        missing = [name for name in model.feature_names if name not in features.columns]
        if missing:
            raise ParameterError(f"Columnas ausentes para el modelo: {missing}")
        return features[list(model.feature_names)].to_numpy(dtype=np.float64)

    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != model.n_features:
        raise ParameterError(f"Dimension {X.shape[1]} distinta de {model.n_features} features del modelo")
    return X


def _tree_sums(model: BoostedModel, X: np.ndarray):
    """Suma acumulada de salidas de arboles, ronda por ronda"""
    total = np.zeros(X.shape[0], dtype=np.float64)
    for tree in model.trees:
        total += tree.predict(X)
        yield total


def predict_margin(model: BoostedModel, data) -> np.ndarray:
    X = _design_matrix(model, data)
    total = np.zeros(X.shape[0], dtype=np.float64)
    for total in _tree_sums(model, X):
        pass
    return model.base_margin + model.eta * total


def predict_proba(model: BoostedModel, data) -> np.ndarray:
    return sigmoid(predict_margin(model, data))


def predict_label(model: BoostedModel, data) -> np.ndarray:
    return (predict_proba(model, data) >= 0.5).astype(np.int8)


def staged_margins(model: BoostedModel, data) -> np.ndarray:
    """Margenes (K x filas) del modelo truncado a 1..K arboles"""
    X = _design_matrix(model, data)
    stages = [model.base_margin + model.eta * total for total in _tree_sums(model, X)]
    return np.vstack(stages) if stages else np.empty((0, X.shape[0]))


def staged_metrics(model: BoostedModel, frame: 'FeatureFrame', rows: slice = slice(None)) -> pd.DataFrame:
    """Log loss y error por iteracion sobre las filas indicadas"""
    subset = frame.rows(rows) if hasattr(frame, 'rows') else frame
    y = np.asarray(subset.labels)
    records = []
    for t, margin in enumerate(staged_margins(model, subset), start=1):
        proba = sigmoid(margin)
        records.append({
            'iteration': t,
            'logloss': logloss(y, proba),
            'error': float(np.mean((proba >= 0.5).astype(np.int8) != y)),
        })
    return pd.DataFrame(records, columns=['iteration', 'logloss', 'error'])


def fit_boosted(X: np.ndarray, y: np.ndarray, params: HyperParams,
                feature_names: Optional[Sequence[str]] = None, quiet: bool = False) -> BoostedModel:
    """Entrena N rondas sobre una matriz ya escalada"""
    params.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = X.shape
    if len(np.unique(y)) < 2:
        raise SingleClassError("Las etiquetas de entrenamiento tienen una sola clase")
    feature_names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(n))

    rng = np.random.Generator(np.random.Philox(params.seed))
    n_rows = max(1, math.floor(params.subsample * m))
    n_cols = max(1, math.floor(params.colsample * n))

    model = BoostedModel(trees=[], eta=params.eta, feature_names=feature_names, params=params)
    margin = np.full(m, model.base_margin)

    for k in range(1, params.n_estimators + 1):
        g, h = logistic_grad_hess(y, margin)
        rows = np.sort(rng.choice(m, size=n_rows, replace=False))
        cols = np.sort(rng.choice(n, size=n_cols, replace=False))

        tree = build_tree(X, g, h, rows, cols, params)
        model.trees.append(tree)
        margin = margin + params.eta * tree.predict(X)

        proba = sigmoid(margin)
        record = {
            'iteration': k,
            'logloss': logloss(y, proba),
            'error': float(np.mean((proba >= 0.5) != (y == 1))),
        }
        model.history.append(record)
        if not quiet and (k % LOG_EVERY == 0 or k == params.n_estimators):
            logger.info(f"  Ronda {k:,}/{params.n_estimators:,}: logloss={record['logloss']:.5f}, "
                        f"error={record['error']:.4f}, hojas={tree.n_leaves()}")

    return model


def train(frame: 'FeatureFrame', split: 'SplitIndices', params: HyperParams) -> BoostedModel:
    """Entrena sobre las filas de train del frame (ya escalado y seleccionado)"""
    train_frame = frame.rows(split.train)
    logger.info(f"Entrenando GBDT: {params.n_estimators:,} arboles sobre "
                f"{train_frame.m:,} filas x {train_frame.n} features")

    model = fit_boosted(train_frame.matrix, train_frame.labels, params, train_frame.columns)

    log_stage_summary('ENTRENAMIENTO GBDT', {
        'arboles': len(model.trees),
        'hojas totales': sum(tree.n_leaves() for tree in model.trees),
        'logloss inicial': model.history[0]['logloss'],
        'logloss final': model.history[-1]['logloss'],
        'error final': model.history[-1]['error'],
    }, logger)
    return model


# ==================== AUDITORIA E IMPORTANCIA ====================

def audit_tree(model: BoostedModel) -> List[str]:
    """Splits que violan ganancia > 0, cobertura >= W_min o profundidad maxima"""
    violations = []
    for k, tree in enumerate(model.trees):
        for node, depth in tree.walk():
            if node.is_leaf:
                continue
            where = f"arbol {k}, profundidad {depth}"
            if node.gain <= 0:
                violations.append(f"{where}: ganancia {node.gain}")
            for child in (node.left, node.right):
                if child.cover < model.params.min_child_weight:
                    violations.append(f"{where}: cobertura {child.cover} < {model.params.min_child_weight}")
            if depth >= model.params.max_depth:
                violations.append(f"{where}: excede max_depth={model.params.max_depth}")
    return violations


def feature_importance(model: BoostedModel, kind: str = 'gain') -> pd.Series:
    """Importancia por feature: ganancia total, numero de splits o cobertura total"""
    if kind not in ('gain', 'weight', 'cover'):
        raise ParameterError(f"Tipo de importancia desconocido: {kind}")

    totals = np.zeros(model.n_features)
    for tree in model.trees:
        for node, _ in tree.walk():
            if node.is_leaf:
                continue
            totals[node.feature] += {'gain': node.gain, 'weight': 1.0, 'cover': node.cover}[kind]
    return pd.Series(totals, index=list(model.feature_names), name=f"importance_{kind}")


# ==================== SERIALIZACION ====================

def serialize(model: BoostedModel, metadata: Optional[Dict] = None) -> Dict:
    return {
        'schema': SCHEMA_VERSION,
        'base_margin': format_real(model.base_margin),
        'eta': format_real(model.eta),
        'feature_names': list(model.feature_names),
        'params': model.params.to_dict(),
        'trees': [tree.to_dict() for tree in model.trees],
        'metadata': dict(metadata or {}),
    }


def deserialize(document: Dict) -> BoostedModel:
    schema = document.get('schema')
    if schema != SCHEMA_VERSION:
        raise SchemaVersionError(f"Esquema de modelo no soportado: {schema} (se espera {SCHEMA_VERSION})")

    params = HyperParams(**document.get('params', {}))
    return BoostedModel(
        trees=[TreeNode.from_dict(raw) for raw in document.get('trees', [])],
        eta=float(document['eta']),
        feature_names=tuple(document['feature_names']),
        params=params,
        base_margin=float(document.get('base_margin', '0')),
    )


def save_model(model: BoostedModel, path, metadata: Optional[Dict] = None):
    return write_json(serialize(model, metadata), path)


def load_model(path, command: str = 'train') -> BoostedModel:
    return deserialize(read_json(path, command))
