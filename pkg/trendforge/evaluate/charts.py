"""Figuras del comando report (PNG, backend Agg)"""
import logging
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from trendforge.evaluate.metrics import EvalReport  # noqa: E402

logger = logging.getLogger(__name__)

DPI = 150


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, bbox_inches='tight')
    plt.close(fig)
    logger.info(f"Grafico guardado: {path}")
    return path


def plot_price_signals(timestamps, close, signals, path) -> Path:
    """Precio de cierre con las senales Buy (+1) / Sell (-1) superpuestas"""
    sns.set_theme(style='whitegrid')
    times = pd.to_datetime(np.asarray(timestamps), unit='ms', utc=True)
    close = np.asarray(close, dtype=np.float64)
    signals = np.asarray(signals)

    fig, ax = plt.subplots(figsize=(14, 6))
    ax.plot(times, close, color='black', lw=0.8, label='Close')
    buy = signals == 1
    ax.scatter(times[buy], close[buy], s=4, color='tab:green', label='Buy', alpha=0.6)
    ax.scatter(times[~buy], close[~buy], s=4, color='tab:red', label='Sell', alpha=0.6)
    ax.set_title('Precio de cierre y senales MA')
    ax.set_xlabel('Tiempo (UTC)')
    ax.set_ylabel('Precio')
    ax.legend(loc='upper left')
    return _save(fig, path)


def plot_feature_scores(importance: pd.DataFrame, path, column: str = 'chi2_score') -> Path:
    """Barras horizontales de importancia; seleccionadas resaltadas"""
    sns.set_theme(style='whitegrid')
    ordered = importance.sort_values(column, ascending=True, kind='stable')
    colors = ['tab:blue' if flag else 'lightgray' for flag in ordered['selected_flag']]

    fig, ax = plt.subplots(figsize=(10, max(4, 0.3 * len(ordered))))
    ax.barh(ordered['feature'], ordered[column], color=colors)
    ax.set_title(f'Importancia de features ({column})')
    ax.set_xlabel(column)
    return _save(fig, path)


def plot_roc(reports: Dict[str, EvalReport], path) -> Path:
    sns.set_theme(style='whitegrid')
    fig, ax = plt.subplots(figsize=(8, 8))
    for name, report in reports.items():
        if not report.roc_points:
            continue
        fpr = [point[0] for point in report.roc_points]
        tpr = [point[1] for point in report.roc_points]
        ax.plot(fpr, tpr, lw=2, label=f"{name} (AUC = {report.roc_auc:.4f})")
    ax.plot([0, 1], [0, 1], 'k--', lw=1, label='Aleatorio (AUC = 0.50)')
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel('False Positive Rate')
    ax.set_ylabel('True Positive Rate')
    ax.set_title('Curva ROC')
    ax.legend(loc='lower right')
    return _save(fig, path)


def plot_curves(curves: pd.DataFrame, path, metrics: List[str] = ('logloss', 'error')) -> List[Path]:
    """Una figura por metrica con las curvas train/test por iteracion"""
    sns.set_theme(style='whitegrid')
    path = Path(path)
    written = []
    for metric in metrics:
        columns = [c for c in (f'train_{metric}', f'test_{metric}') if c in curves.columns]
        if not columns:
            continue
        long = curves.melt(id_vars='iteration', value_vars=columns, var_name='conjunto', value_name=metric)
        fig, ax = plt.subplots(figsize=(10, 5))
        sns.lineplot(data=long, x='iteration', y=metric, hue='conjunto', ax=ax)
        ax.set_title(f'{metric} por iteracion')
        written.append(_save(fig, path.with_name(f"{path.stem}_{metric}{path.suffix}")))
    return written


def plot_confusion(report: EvalReport, path, title: str = 'Matriz de confusion') -> Path:
    fig, ax = plt.subplots(figsize=(6, 5))
    sns.heatmap(report.matrix.to_frame(), annot=True, fmt='d', cmap='Blues', ax=ax)
    ax.set_title(title)
    ax.set_ylabel('Clase real')
    return _save(fig, path)
