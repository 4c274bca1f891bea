"""Metricas de clasificacion binaria (Buy = 1 es la clase positiva)"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from trendforge.utils.artifacts import write_json
from trendforge.utils.errors import ParameterError, SingleClassError

logger = logging.getLogger(__name__)

PROBA_EPS = 1e-15


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def to_dict(self) -> Dict[str, int]:
        return {'tn': self.tn, 'fp': self.fp, 'fn': self.fn, 'tp': self.tp}

    def to_frame(self) -> pd.DataFrame:
        """Filas: clase real (Sell, Buy); columnas: prediccion"""
        return pd.DataFrame(
            [[self.tn, self.fp], [self.fn, self.tp]],
            index=['Sell', 'Buy'],
            columns=['Predicted 0', 'Predicted 1'],
        )


@dataclass(frozen=True)
class ScalarMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: Tuple[str, ...] = ()


def _binary(values, name: str) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim != 1:
        raise ParameterError(f"{name} debe ser unidimensional")
    if not np.isin(values, (0, 1)).all():
        raise ParameterError(f"{name} debe contener solo 0 y 1")
    return values.astype(np.int64)


def _check_lengths(a, b) -> None:
    if len(a) != len(b):
        raise ParameterError(f"Longitudes distintas: {len(a)} vs {len(b)}")


def confusion(labels, preds) -> ConfusionMatrix:
    _check_lengths(labels, preds)
    y = _binary(labels, 'labels')
    p = _binary(preds, 'preds')
    return ConfusionMatrix(
        tn=int(((y == 0) & (p == 0)).sum()),
        fp=int(((y == 0) & (p == 1)).sum()),
        fn=int(((y == 1) & (p == 0)).sum()),
        tp=int(((y == 1) & (p == 1)).sum()),
    )


def scalar_metrics(matrix: ConfusionMatrix) -> ScalarMetrics:
    """Accuracy, precision, recall y F1; denominadores nulos retornan 0 marcados como degenerados"""
    if matrix.total == 0:
        raise ParameterError("Matriz de confusion vacia")

    degenerate = []

    def ratio(numerator: float, denominator: float, name: str) -> float:
        if denominator == 0:
            degenerate.append(name)
            return 0.0
        return numerator / denominator

    accuracy = (matrix.tp + matrix.tn) / matrix.total
    precision = ratio(matrix.tp, matrix.tp + matrix.fp, 'precision')
    recall = ratio(matrix.tp, matrix.tp + matrix.fn, 'recall')
    f1 = ratio(2.0 * precision * recall, precision + recall, 'f1')

    if degenerate:
        logger.warning(f"  Metricas degeneradas (denominador cero): {degenerate}")
    return ScalarMetrics(accuracy, precision, recall, f1, tuple(degenerate))


def roc_curve(labels, scores) -> List[Tuple[float, float, float]]:
    """Puntos (fpr, tpr, threshold) barriendo cada score distinto en orden descendente"""
    _check_lengths(labels, scores)
    y = _binary(labels, 'labels')
    s = np.asarray(scores, dtype=np.float64)

    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC requiere ambas clases en las etiquetas")

    order = np.argsort(-s, kind='stable')
    s_sorted = s[order]
    y_sorted = y[order]

    # ultimo indice de cada grupo de scores iguales
    group_ends = np.flatnonzero(np.diff(s_sorted) != 0)
    group_ends = np.append(group_ends, len(s_sorted) - 1)

    tps = np.cumsum(y_sorted)[group_ends]
    fps = (group_ends + 1) - tps

    points = [(0.0, 0.0, float('inf'))]
    points.extend(
        (float(fp / n_neg), float(tp / n_pos), float(s_sorted[end]))
        for fp, tp, end in zip(fps, tps, group_ends)
    )
    return points


def roc_auc(labels, scores) -> Tuple[float, List[Tuple[float, float, float]]]:
    """AUC por regla del trapecio sobre la curva ROC"""
    points = roc_curve(labels, scores)
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return auc, points


def rank_auc(labels, scores) -> float:
    """AUC como fraccion de pares concordantes (empates cuentan 1/2)"""
    _check_lengths(labels, scores)
    y = _binary(labels, 'labels')
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC requiere ambas clases en las etiquetas")

    ranks = pd.Series(np.asarray(scores, dtype=np.float64)).rank(method='average').to_numpy()
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(labels, probs) -> float:
    _check_lengths(labels, probs)
    y = np.asarray(labels, dtype=np.float64)
    p = np.clip(np.asarray(probs, dtype=np.float64), PROBA_EPS, 1.0 - PROBA_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


# ==================== REPORTE ====================

@dataclass(frozen=True, eq=False)
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float
    logloss: float
    matrix: ConfusionMatrix
    roc_points: List[Tuple[float, float, float]] = field(default_factory=list)
    degenerate: Tuple[str, ...] = ()
    threshold: float = 0.5

    @property
    def n_rows(self) -> int:
        return self.matrix.total

    def scalars(self) -> Dict[str, float]:
        return {
            'accuracy': self.accuracy,
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'roc_auc': self.roc_auc,
            'logloss': self.logloss,
        }

    def to_dict(self, files: Optional[Dict[str, str]] = None) -> Dict:
        payload = dict(self.scalars())
        payload['confusion_matrix'] = self.matrix.to_dict()
        payload['n_rows'] = self.n_rows
        payload['threshold'] = self.threshold
        payload['degenerate'] = list(self.degenerate)
        payload['files'] = dict(files or {})
        return payload

    @classmethod
    def from_dict(cls, payload: Dict, roc: Optional[pd.DataFrame] = None) -> 'EvalReport':
        """Reconstruye un reporte desde report.json (y opcionalmente roc.csv)"""
        points = []
        if roc is not None:
            points = [(float(r.fpr), float(r.tpr), float(r.threshold)) for r in roc.itertuples(index=False)]
        return cls(
            accuracy=float(payload['accuracy']),
            precision=float(payload['precision']),
            recall=float(payload['recall']),
            f1=float(payload['f1']),
            roc_auc=float(payload['roc_auc']),
            logloss=float(payload['logloss']),
            matrix=ConfusionMatrix(**{k: int(v) for k, v in payload['confusion_matrix'].items()}),
            roc_points=points,
            degenerate=tuple(payload.get('degenerate', ())),
            threshold=float(payload.get('threshold', 0.5)),
        )

    def roc_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(threshold, fpr, tpr) for fpr, tpr, threshold in self.roc_points],
            columns=['threshold', 'fpr', 'tpr'],
        )


def evaluate(labels, probs, threshold: float = 0.5) -> EvalReport:
    """Reporte completo: matriz de confusion, metricas escalares, ROC y log loss"""
    _check_lengths(labels, probs)
    probs = np.asarray(probs, dtype=np.float64)
    preds = (probs >= threshold).astype(np.int64)

    matrix = confusion(labels, preds)
    scalars = scalar_metrics(matrix)
    degenerate = list(scalars.degenerate)

    try:
        auc, points = roc_auc(labels, probs)
    except SingleClassError:
        logger.warning("  ROC indefinida: etiquetas de una sola clase")
        auc, points = 0.0, []
        degenerate.append('roc_auc')

    return EvalReport(
        accuracy=scalars.accuracy,
        precision=scalars.precision,
        recall=scalars.recall,
        f1=scalars.f1,
        roc_auc=auc,
        logloss=logloss(labels, probs),
        matrix=matrix,
        roc_points=points,
        degenerate=tuple(degenerate),
        threshold=threshold,
    )


def write_report(report: EvalReport, path, files: Optional[Dict[str, str]] = None,
                 extra: Optional[Dict] = None) -> Path:
    payload = report.to_dict(files)
    payload.update(extra or {})
    return write_json(payload, path)


def write_roc_csv(report: EvalReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.roc_frame().to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Archivo guardado: {path} ({len(report.roc_points):,} puntos)")
    return path


def compare_reports(reports: Dict[str, EvalReport]) -> pd.DataFrame:
    """Tabla comparativa de metricas por modelo"""
    rows = []
    for name, report in reports.items():
        row = {'model': name}
        row.update(report.scalars())
        row.update({key: value for key, value in report.matrix.to_dict().items()})
        rows.append(row)
    return pd.DataFrame(rows)


def log_report(title: str, report: EvalReport, log: Optional[logging.Logger] = None) -> None:
    log = log or logger
    log.info(f"{'='*60}")
    log.info(f"METRICAS: {title}")
    log.info(f"{'='*60}")
    for name, value in report.scalars().items():
        log.info(f"  {name:<10}: {value:.4f}")
    m = report.matrix
    log.info(f"  Confusion  : TN={m.tn:,} FP={m.fp:,} FN={m.fn:,} TP={m.tp:,}")
    log.info(f"{'='*60}")
