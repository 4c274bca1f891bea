"""Busqueda exhaustiva en grilla con seleccion por menor RMSE de probabilidades.

La validacion usa el bloque final del conjunto de entrenamiento (orden
temporal): cada celda entrena con el primer tramo y se evalua en el ultimo.
"""
import dataclasses
import itertools
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from trendforge.models.gbdt import HyperParams, fit_boosted, predict_proba
from trendforge.models.logreg import LogRegConfig, fit_matrix, predict_logreg
from trendforge.transform.pipeline import FeatureFrame, SplitIndices, time_split
from trendforge.utils.artifacts import write_json
from trendforge.utils.errors import GridSearchError, ParameterError, TrendForgeError
from trendforge.utils.logging_utils import log_stage_summary

logger = logging.getLogger(__name__)

LEARNERS = ('gbdt', 'logreg')


@dataclass
class GridSpec:
    """Nombre de parametro -> valores candidatos; se enumera el producto cartesiano"""
    params: 'OrderedDict[str, tuple]'

    def __post_init__(self):
        self.params = OrderedDict((name, tuple(values)) for name, values in self.params.items())
        if not self.params:
            raise ParameterError("La grilla no tiene parametros")
        empty = [name for name, values in self.params.items() if len(values) == 0]
        if empty:
            raise ParameterError(f"Parametros sin valores candidatos: {empty}")

    @property
    def size(self) -> int:
        return int(np.prod([len(values) for values in self.params.values()]))

    def cells(self) -> List[Dict[str, Any]]:
        """Celdas en orden lexicografico segun el orden de declaracion"""
        names = list(self.params)
        return [dict(zip(names, combo)) for combo in itertools.product(*self.params.values())]

    def check_names(self, target) -> None:
        known = {f.name for f in dataclasses.fields(target)}
        unknown = [name for name in self.params if name not in known]
        if unknown:
            raise ParameterError(f"Parametros desconocidos para {target.__name__}: {unknown}")
        if 'seed' in self.params:
            raise ParameterError("La semilla no es un parametro de grilla")

    @classmethod
    def from_dict(cls, raw: Dict[str, Sequence]) -> 'GridSpec':
        return cls(OrderedDict((name, tuple(values)) for name, values in raw.items()))


def reference_gbdt_grid() -> GridSpec:
    """Grilla de 768 celdas (N, eta, D_max, W_min, S, C, gamma, alpha, lambda)"""
    return GridSpec(OrderedDict([
        ('n_estimators', (300, 400)),
        ('eta', (0.01, 0.1, 0.2)),
        ('max_depth', (3, 4)),
        ('min_child_weight', (1.0, 3.0)),
        ('subsample', (0.8, 1.0)),
        ('colsample', (0.8, 1.0)),
        ('gamma', (0.0, 0.1)),
        ('alpha', (0.5, 1.0)),
        ('reg_lambda', (0.5, 1.0)),
    ]))


def reference_logreg_grid() -> GridSpec:
    """penalty x C x max_iter (60 celdas); un unico solver cubre todas las penalidades"""
    return GridSpec(OrderedDict([
        ('penalty', ('l1', 'l2', 'elasticnet', 'none')),
        ('C', (0.01, 0.1, 1.0, 10.0, 100.0)),
        ('max_iter', (100, 200, 300)),
    ]))


@dataclass
class CellRecord:
    cell: int
    params: Dict[str, Any]
    rmse: float = float('nan')
    accuracy: float = float('nan')
    wall_time_ms: float = 0.0
    status: str = 'ok'
    error: str = ''


@dataclass
class TuneResult:
    learner: str
    grid: GridSpec
    records: List[CellRecord]
    best: CellRecord
    n_fit: int = 0
    n_validation: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def best_params(self) -> Dict[str, Any]:
        return dict(self.best.params)

    def to_frame(self) -> pd.DataFrame:
        return records_frame(self.records, list(self.grid.params))


def records_frame(records: Sequence[CellRecord], names: Sequence[str]) -> pd.DataFrame:
    rows = []
    for record in records:
        row = {'cell': record.cell}
        row.update({name: record.params.get(name) for name in names})
        row.update({
            'rmse': record.rmse,
            'accuracy': record.accuracy,
            'wall_time_ms': record.wall_time_ms,
            'status': record.status,
            'error': record.error,
        })
        rows.append(row)
    return pd.DataFrame(rows)


def select_best(table: Union[pd.DataFrame, Sequence[CellRecord]]) -> int:
    """Indice de celda con menor RMSE entre las exitosas; empates al menor indice"""
    if not isinstance(table, pd.DataFrame):
        table = pd.DataFrame([{'cell': r.cell, 'rmse': r.rmse, 'status': r.status} for r in table])

    ok = table[(table['status'] == 'ok') & table['rmse'].notna()]
    if ok.empty:
        raise GridSearchError("Ninguna celda de la grilla entreno correctamente")
    ok = ok.sort_values(['rmse', 'cell'], kind='stable')
    return int(ok['cell'].iloc[0])


# ==================== EJECUCION ====================

def _run_cell(index: int, cell: Dict[str, Any], learner: str, base, X_fit, y_fit, X_val, y_val) -> CellRecord:
    record = CellRecord(cell=index, params=dict(cell))
    started = time.perf_counter()
    try:
        params = dataclasses.replace(base, **cell)
        if learner == 'gbdt':
            model = fit_boosted(X_fit, y_fit, params, quiet=True)
            proba = predict_proba(model, X_val)
        else:
            model = fit_matrix(X_fit, y_fit, params)
            proba = predict_logreg(model, X_val)
        record.rmse = float(np.sqrt(np.mean((proba - y_val) ** 2)))
        record.accuracy = float(np.mean((proba >= 0.5) == (y_val == 1)))
    except (TrendForgeError, ValueError, FloatingPointError) as e:
        record.status = 'failed'
        record.error = str(e)
    record.wall_time_ms = round((time.perf_counter() - started) * 1000.0, 3)
    return record


def grid_search(frame: FeatureFrame, split: SplitIndices, grid: GridSpec, learner: str = 'gbdt',
                base: Optional[Union[HyperParams, LogRegConfig]] = None,
                validation_fraction: float = 0.2, n_jobs: int = 1) -> TuneResult:
    """Evalua cada celda de la grilla y selecciona la de menor RMSE de validacion"""
    if learner not in LEARNERS:
        raise ParameterError(f"learner desconocido: {learner}")
    if base is None:
        base = HyperParams() if learner == 'gbdt' else LogRegConfig()
    grid.check_names(type(base))

    train_frame = frame.rows(split.train)
    inner = time_split(train_frame.m, validation_fraction)
    X = train_frame.matrix
    y = train_frame.labels.astype(np.float64)
    X_fit, y_fit = X[inner.train], y[inner.train]
    X_val, y_val = X[inner.test], y[inner.test]

    cells = grid.cells()
    logger.info(f"Grid search ({learner}): {len(cells):,} celdas, "
                f"ajuste={inner.n_train:,} filas, validacion={inner.n_test:,} filas, n_jobs={n_jobs}")

    # la barra avanza con celdas terminadas, no con tareas despachadas
    completed = Parallel(n_jobs=n_jobs, return_as='generator')(
        delayed(_run_cell)(index, cell, learner, base, X_fit, y_fit, X_val, y_val)
        for index, cell in enumerate(cells)
    )
    records = list(tqdm(completed, total=len(cells), desc=f"Grid {learner}", unit="celda"))
    records = sorted(records, key=lambda record: record.cell)

    failed = [record for record in records if record.status != 'ok']
    for record in failed:
        logger.warning(f"  Celda {record.cell} fallida: {record.error}")

    best = records[select_best(records)]
    result = TuneResult(
        learner=learner,
        grid=grid,
        records=records,
        best=best,
        n_fit=inner.n_train,
        n_validation=inner.n_test,
    )

    log_stage_summary(f'GRID SEARCH {learner.upper()}', {
        'celdas': len(records),
        'fallidas': len(failed),
        'mejor celda': best.cell,
        'mejor RMSE': best.rmse,
        'accuracy validacion': best.accuracy,
        'parametros': best.params,
    }, logger)
    return result


def write_tune_log(result: TuneResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.to_frame().to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Archivo guardado: {path} ({len(result.records):,} celdas)")
    return path


def write_tune_best(result: TuneResult, path, extra: Optional[Dict] = None) -> Path:
    payload = {
        'learner': result.learner,
        'grid_size': result.grid.size,
        'best_cell': result.best.cell,
        'best_params': result.best_params,
        'rmse': result.best.rmse,
        'accuracy': result.best.accuracy,
        'n_fit': result.n_fit,
        'n_validation': result.n_validation,
    }
    payload.update(extra or {})
    return write_json(payload, path)
