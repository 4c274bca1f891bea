"""Linea de comandos: fetch -> build -> train / tune -> eval -> report.

Cada comando consume los artefactos del anterior en ``output_dir``:

    fetch   candles.csv
    build   features.csv, selection.csv, split.json
    train   scaler.json, model.json, train_curves.csv (+ baseline.json)
    tune    tune_log.csv, tune_best.json
    eval    report.json, roc.csv, curves.csv (+ baseline_report.json, baseline_roc.csv)
    report  feature_importance.csv, comparison.csv, charts/*.png

Codigos de salida: 0 exito, 2 configuracion, 3 datos, 4 entrenamiento.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from trendforge.config.settings import RunConfig, parse_time_bound
from trendforge.evaluate import charts
from trendforge.evaluate.metrics import (
    EvalReport,
    compare_reports,
    evaluate,
    log_report,
    write_report,
    write_roc_csv,
)
from trendforge.extract.market_data import fetch_klines, gap_report, parse_klines_csv
from trendforge.models import gbdt, logreg
from trendforge.models.tuning import (
    GridSpec,
    grid_search,
    reference_gbdt_grid,
    reference_logreg_grid,
    write_tune_best,
    write_tune_log,
)
from trendforge.transform.pipeline import (
    FeatureFrame,
    ScalerParams,
    SplitIndices,
    build_frame,
    chi2_scores,
    compare_selection,
    fit_scaler,
    read_feature_csv,
    read_selection_report,
    select,
    time_split,
    transform,
    write_selection_report,
    write_split_manifest,
)
from trendforge.utils.artifacts import file_sha256, read_json, require_artifact, write_json
from trendforge.utils.errors import DataError, HashMismatchError, SchemaVersionError, TrendForgeError
from trendforge.utils.logging_utils import configure_logging, log_stage_summary

logger = logging.getLogger(__name__)


# ==================== CONFIGURACION ====================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='Archivo TOML/YAML de configuracion')
    common.add_argument('--output-dir', dest='output_dir', type=str, help='Directorio de artefactos')
    common.add_argument('--seed', type=int, help='Semilla global')
    common.add_argument('--log-level', dest='log_level', type=str, help='DEBUG, INFO, WARNING, ERROR')

    parser = argparse.ArgumentParser(
        prog='trendforge',
        description='Clasificacion de tendencia BTC: indicadores, seleccion χ² y gradient boosting',
    )
    commands = parser.add_subparsers(dest='command', required=True)

    fetch = commands.add_parser('fetch', parents=[common], help='Descarga klines a candles.csv')
    fetch.add_argument('--symbol', type=str)
    fetch.add_argument('--interval', type=str)
    fetch.add_argument('--start', type=str, help='Fecha ISO (UTC) o epoch-ms')
    fetch.add_argument('--end', type=str, help='Fecha ISO (UTC) o epoch-ms, exclusiva')

    build = commands.add_parser('build', parents=[common], help='Features, particion y seleccion χ²')
    build.add_argument('--csv', type=str, help='CSV de klines existente')
    build.add_argument('--k', type=int, help='Numero de features seleccionadas')
    build.add_argument('--p', type=float, help='Fraccion de test')
    build.add_argument('--enforce-expected', dest='enforce_expected', action='store_true', default=None)
    build.add_argument('--bb-ddof', dest='bb_ddof', type=int, choices=(0, 1), help='ddof de la desviacion de Bollinger')

    train = commands.add_parser('train', parents=[common], help='Entrena el modelo (y la linea base)')
    train.add_argument('--learner', choices=('gbdt', 'logreg'))
    train.add_argument('--baseline', choices=('gbdt', 'logreg', 'none'))
    train.add_argument('--baseline-features', dest='baseline_features', choices=('selected', 'all'),
                       help='Linea base sobre las k seleccionadas o sobre todas las columnas')

    tune = commands.add_parser('tune', parents=[common], help='Grid search con validacion temporal')
    tune.add_argument('--learner', choices=('gbdt', 'logreg'))
    tune.add_argument('--n-jobs', dest='n_jobs', type=int)

    commands.add_parser('eval', parents=[common], help='Metricas sobre el conjunto de test')
    commands.add_parser('report', parents=[common], help='Importancia de features, comparacion y graficos')
    return parser


OVERRIDES = {
    'output_dir': 'output_dir',
    'seed': 'seed',
    'log_level': 'logging.level',
    'symbol': 'data.symbol',
    'interval': 'data.interval',
    'start': 'data.start',
    'end': 'data.end',
    'csv': 'data.csv_path',
    'k': 'selection.k',
    'p': 'split.p',
    'enforce_expected': 'selection.enforce_expected',
    'bb_ddof': 'features.bb_ddof',
    'learner': 'model.learner',
    'n_jobs': 'tuning.n_jobs',
}


def load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig.from_dict({})
    overrides = {dotted: getattr(args, name, None) for name, dotted in OVERRIDES.items()}
    baseline = getattr(args, 'baseline', None)
    if baseline in ('gbdt', 'logreg'):
        overrides['model.baseline_learner'] = baseline
    baseline_features = getattr(args, 'baseline_features', None)
    if baseline_features:
        overrides['model.baseline_uses_selected'] = baseline_features == 'selected'
    config = config.apply_overrides(overrides)
    if baseline == 'none':
        config.model.baseline_learner = None
    return config


# ==================== HELPERS ====================

def _load_built(config: RunConfig) -> Tuple[FeatureFrame, SplitIndices, str]:
    """features.csv + split.json verificados contra el hash registrado por build"""
    paths = config.paths()
    features_path = require_artifact(paths['features'], 'build')
    manifest = read_json(paths['split'], 'build')
    features_hash = file_sha256(features_path)
    if manifest.get('features_hash') not in (None, features_hash):
        raise HashMismatchError(f"{features_path} no corresponde al split.json registrado por build")

    frame = read_feature_csv(features_path)
    split = SplitIndices.from_dict(manifest)
    if split.m != frame.m:
        raise DataError(f"split.json describe m={split.m:,} filas, features.csv tiene {frame.m:,}")
    return frame, split, features_hash


def _scaled_selected(config: RunConfig, frame: FeatureFrame, split: SplitIndices,
                     scaler: Optional[ScalerParams] = None) -> Tuple[FeatureFrame, FeatureFrame, ScalerParams]:
    scaler = scaler or fit_scaler(frame, split)
    scaled = transform(frame, scaler)
    paths = config.paths()
    selection_path = require_artifact(paths['selection'], 'build')
    manifest = read_json(paths['split'], 'build')
    if manifest.get('selection_hash') not in (None, file_sha256(selection_path)):
        raise HashMismatchError(f"{selection_path} no corresponde al split.json registrado por build")
    selection = read_selection_report(selection_path)
    return scaled, select(scaled, selection), scaler


def _fit_learner(learner: str, frame: FeatureFrame, split: SplitIndices, config: RunConfig):
    if learner == 'gbdt':
        return gbdt.train(frame, split, config.gbdt)
    return logreg.fit_logreg(frame, split, config.logreg)


def _save_learner(model, path, metadata: Dict):
    if isinstance(model, gbdt.BoostedModel):
        return gbdt.save_model(model, path, metadata)
    return logreg.save_model(model, path, metadata)


def _load_learner(path) -> Tuple[object, Dict]:
    document = read_json(path, 'train')
    schema = document.get('schema')
    if schema == gbdt.SCHEMA_VERSION:
        return gbdt.deserialize(document), document.get('metadata', {})
    if schema == logreg.SCHEMA_VERSION:
        return logreg.deserialize(document), document.get('metadata', {})
    raise SchemaVersionError(f"Esquema de modelo no soportado en {path}: {schema}")


def _predict(model, frame: FeatureFrame) -> np.ndarray:
    if isinstance(model, gbdt.BoostedModel):
        return gbdt.predict_proba(model, frame)
    return logreg.predict_logreg(model, frame)


def _check_hash(metadata: Dict, features_hash: str, path) -> None:
    if metadata.get('features_hash') != features_hash:
        raise HashMismatchError(f"{path} fue entrenado con otro features.csv; ejecutar 'train' nuevamente")


# ==================== COMANDOS ====================

def cmd_fetch(config: RunConfig) -> int:
    paths = config.paths()
    target = Path(config.output_dir) / 'candles.csv'
    start = parse_time_bound(config.data.start)
    end = parse_time_bound(config.data.end)

    series = fetch_klines(config.data.symbol, config.data.interval, start, end, cache_path=target)
    missing = gap_report(series)
    log_stage_summary('FETCH', {
        'simbolo': config.data.symbol,
        'intervalo': config.data.interval,
        'velas': len(series),
        'velas faltantes': len(missing),
        'duplicados descartados': series.duplicates_dropped,
        'archivo': str(target),
    }, logger)
    if paths['candles'] != target:
        logger.info(f"data.csv_path apunta a {paths['candles']}; build usara ese archivo")
    return 0


def cmd_build(config: RunConfig) -> int:
    paths = config.paths()
    candles = parse_klines_csv(require_artifact(paths['candles'], 'fetch'), config.data.interval)
    frame = build_frame(candles, config.features, config.labels)
    frame.to_csv(paths['features'])

    split = time_split(frame, config.split.p)
    selection = chi2_scores(frame, split, config.selection.k)
    write_selection_report(selection, paths['selection'])

    comparison = compare_selection(selection.selected, config.selection.expected, config.selection.min_overlap)
    if config.selection.enforce_expected and not comparison['matches']:
        raise DataError(
            f"Seleccion distinta de la esperada: faltan {comparison['missing']}, sobran {comparison['extra']}"
        )

    write_split_manifest(split, paths['split'], {
        'config_hash': config.config_hash(),
        'features_hash': file_sha256(paths['features']),
        'selection_hash': file_sha256(paths['selection']),
        'n_bars': len(candles),
    })
    log_stage_summary('BUILD', {
        'filas (m)': frame.m,
        'train': split.n_train,
        'test': split.n_test,
        'seleccionadas': ', '.join(selection.selected),
        'coincidencias con referencia': comparison['overlap'],
    }, logger)
    return 0


def cmd_train(config: RunConfig) -> int:
    paths = config.paths()
    frame, split, features_hash = _load_built(config)
    scaled, selected, scaler = _scaled_selected(config, frame, split)

    metadata = {'config_hash': config.config_hash(), 'features_hash': features_hash}
    write_json({**scaler.to_dict(), **metadata}, paths['scaler'])

    learner = config.model.learner
    model = _fit_learner(learner, selected, split, config)
    _save_learner(model, paths['model'], {**metadata, 'learner': learner})

    if isinstance(model, gbdt.BoostedModel):
        violations = gbdt.audit_tree(model)
        if violations:
            logger.warning(f"  Auditoria de arboles: {len(violations)} violaciones, primera: {violations[0]}")
        curves = pd.DataFrame(model.history)
        curves.to_csv(paths['train_curves'], index=False, lineterminator='\n')

    baseline_learner = config.model.baseline_learner
    if baseline_learner:
        baseline_frame = selected if config.model.baseline_uses_selected else scaled
        baseline = _fit_learner(baseline_learner, baseline_frame, split, config)
        _save_learner(baseline, paths['baseline'], {**metadata, 'learner': baseline_learner})

    logger.info(f"Modelo guardado: {paths['model']}")
    return 0


def cmd_tune(config: RunConfig) -> int:
    paths = config.paths()
    frame, split, features_hash = _load_built(config)
    _, selected, _ = _scaled_selected(config, frame, split)

    learner = config.model.learner
    if learner == 'gbdt':
        grid = GridSpec.from_dict(config.tuning.gbdt_grid) if config.tuning.gbdt_grid else reference_gbdt_grid()
        base = config.gbdt
    else:
        grid = GridSpec.from_dict(config.tuning.logreg_grid) if config.tuning.logreg_grid else reference_logreg_grid()
        base = config.logreg

    result = grid_search(selected, split, grid, learner, base,
                         config.tuning.validation_fraction, config.tuning.n_jobs)
    write_tune_log(result, paths['tune_log'])

    reference = {name: getattr(base, name) for name in grid.params}
    matches = all(result.best_params[name] == value for name, value in reference.items())
    if not matches:
        logger.info(f"  La mejor celda difiere de los parametros configurados: {reference}")
    write_tune_best(result, paths['tune_best'], {
        'config_hash': config.config_hash(),
        'features_hash': features_hash,
        'configured_params': reference,
        'matches_configured': matches,
    })
    return 0


def _evaluate_learner(model, metadata: Dict, scaled: FeatureFrame, split: SplitIndices,
                      report_path, roc_path, extra: Dict, title: str) -> EvalReport:
    test = scaled.rows(split.test)
    report = evaluate(test.labels, _predict(model, test))
    write_roc_csv(report, roc_path)
    write_report(report, report_path, files={'roc': Path(roc_path).name}, extra={**extra, **metadata})
    log_report(title, report, logger)
    return report


def cmd_eval(config: RunConfig) -> int:
    paths = config.paths()
    frame, split, features_hash = _load_built(config)

    model, metadata = _load_learner(require_artifact(paths['model'], 'train'))
    _check_hash(metadata, features_hash, paths['model'])
    scaler_payload = read_json(paths['scaler'], 'train')
    _check_hash(scaler_payload, features_hash, paths['scaler'])
    scaled = transform(frame, ScalerParams.from_dict(scaler_payload))

    extra = {'config_hash': config.config_hash(), 'model_hash': file_sha256(paths['model'])}
    report = _evaluate_learner(model, metadata, scaled, split, paths['report'], paths['roc'],
                               extra, metadata.get('learner', 'modelo').upper())

    if isinstance(model, gbdt.BoostedModel):
        train_curve = gbdt.staged_metrics(model, scaled, split.train)
        test_curve = gbdt.staged_metrics(model, scaled, split.test)
        curves = pd.DataFrame({
            'iteration': train_curve['iteration'],
            'train_logloss': train_curve['logloss'],
            'test_logloss': test_curve['logloss'],
            'train_error': train_curve['error'],
            'test_error': test_curve['error'],
        })
        curves.to_csv(paths['curves'], index=False, lineterminator='\n')
        gap = abs(curves['train_logloss'].iloc[-1] - curves['test_logloss'].iloc[-1])
        logger.info(f"  Brecha final de log loss train/test: {gap:.4f}")
        if gap >= 0.1:
            logger.warning("  Brecha train/test >= 0.1: posible sobreajuste")

    if paths['baseline'].exists():
        baseline, baseline_meta = _load_learner(paths['baseline'])
        _check_hash(baseline_meta, features_hash, paths['baseline'])
        _evaluate_learner(baseline, baseline_meta, scaled, split, paths['baseline_report'],
                          paths['baseline_roc'], extra, f"LINEA BASE {baseline_meta.get('learner', '')}".strip())

    logger.info(f"Accuracy de test: {report.accuracy:.4f}")
    return 0


def cmd_report(config: RunConfig) -> int:
    paths = config.paths()
    frame, split, features_hash = _load_built(config)
    selection = read_selection_report(require_artifact(paths['selection'], 'build'))
    model, metadata = _load_learner(require_artifact(paths['model'], 'train'))
    main_name = metadata.get('learner', 'modelo')

    importance = selection.to_frame()
    if isinstance(model, gbdt.BoostedModel):
        gains = gbdt.feature_importance(model, 'gain')
        importance['gbdt_gain'] = importance['feature'].map(gains).fillna(0.0)
    else:
        weights = pd.Series(np.abs(model.weights), index=list(model.feature_names))
        importance['abs_weight'] = importance['feature'].map(weights).fillna(0.0)
    importance.to_csv(paths['importance'], index=False, lineterminator='\n')
    logger.info(f"Archivo guardado: {paths['importance']}")

    reports = {main_name: _read_report(paths['report'], paths['roc'], 'eval')}
    if paths['baseline_report'].exists():
        baseline_meta = read_json(paths['baseline_report'])
        reports[f"{baseline_meta.get('learner', 'baseline')} (linea base)"] = _read_report(
            paths['baseline_report'], paths['baseline_roc'], 'eval')
        comparison = compare_reports(reports)
        comparison.to_csv(paths['comparison'], index=False, lineterminator='\n')
        logger.info(f"Archivo guardado: {paths['comparison']}")

    chart_dir = paths['charts']
    close, signals = _price_and_signals(config, frame)
    charts.plot_price_signals(frame.timestamps, close, signals, chart_dir / 'price_signals.png')
    charts.plot_feature_scores(importance, chart_dir / 'chi2_scores.png')
    charts.plot_roc(reports, chart_dir / 'roc.png')
    charts.plot_confusion(reports[main_name], chart_dir / 'confusion.png')
    if paths['curves'].exists():
        charts.plot_curves(pd.read_csv(paths['curves']), chart_dir / 'curves.png')

    log_stage_summary('REPORT', {
        'features': len(importance),
        'modelos comparados': len(reports),
        'graficos': str(chart_dir),
    }, logger)
    return 0


def _read_report(report_path, roc_path, command: str) -> EvalReport:
    payload = read_json(report_path, command)
    roc = pd.read_csv(roc_path) if Path(roc_path).exists() else None
    return EvalReport.from_dict(payload, roc)


def _price_and_signals(config: RunConfig, frame: FeatureFrame) -> Tuple[np.ndarray, np.ndarray]:
    signals = np.where(frame.labels == 1, 1, -1)
    if 'Close' in frame.features.columns:
        return frame.features['Close'].to_numpy(), signals

    candles = parse_klines_csv(require_artifact(config.paths()['candles'], 'fetch'), config.data.interval)
    close = pd.Series(candles.close, index=candles.open_time)
    return close.reindex(frame.timestamps).to_numpy(), signals


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    'fetch': cmd_fetch,
    'build': cmd_build,
    'train': cmd_train,
    'tune': cmd_tune,
    'eval': cmd_eval,
    'report': cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Función principal"""
    args = build_parser().parse_args(argv)
    command_logger = configure_logging(f"trendforge.{args.command}", args.log_level)

    try:
        config = load_config(args)
        logging.getLogger().setLevel(config.logging.level.upper())
        command_logger.info(f"Configuracion: hash={config.config_hash()[:12]}, output_dir={config.output_dir}")
        exit_code = COMMANDS[args.command](config)
        command_logger.info(f"COMANDO {args.command.upper()} EXITOSO")
        return exit_code

    except TrendForgeError as e:
        command_logger.error(f"COMANDO {args.command.upper()} FALLIDO: {e}", exc_info=True)
        return e.exit_code
    except FileNotFoundError as e:
        command_logger.error(f"Archivo no encontrado: {e}", exc_info=True)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
