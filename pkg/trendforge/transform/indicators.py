"""Indicadores tecnicos sobre series de velas.

Cada indicador retorna una ``IndicatorColumn``: los valores anteriores a
``lookback`` son NaN (periodo de calentamiento) y todos los posteriores estan
definidos. Las ventanas moviles operan sobre el orden de filas; no se imputan
velas faltantes.
"""
import logging
import re
from collections import OrderedDict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from trendforge.utils.errors import InsufficientDataError, ParameterError

if TYPE_CHECKING:
    from trendforge.config.settings import FeatureConfig
    from trendforge.extract.market_data import CandleSeries

logger = logging.getLogger(__name__)

CCI_CONSTANT = 0.015


@dataclass(frozen=True, eq=False)
class IndicatorColumn:
    name: str
    values: np.ndarray
    lookback: int

    def __len__(self) -> int:
        return len(self.values)

    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)


# ==================== HELPERS ====================

def _as_array(series) -> np.ndarray:
    values = np.asarray(series, dtype=np.float64)
    if values.ndim != 1:
        raise ParameterError("Se espera una secuencia unidimensional")
    return values.copy()


def _check_period(tau: int, minimum: int = 1) -> int:
    if isinstance(tau, bool) or int(tau) != tau or tau < minimum:
        raise ParameterError(f"Periodo invalido: {tau} (minimo {minimum})")
    return int(tau)


def _column(name: str, values, lookback: int) -> IndicatorColumn:
    values = np.asarray(values, dtype=np.float64).copy()
    values[:lookback] = np.nan
    return IndicatorColumn(name=name, values=values, lookback=lookback)


def _ohlc(candles: 'CandleSeries') -> Tuple[pd.Series, pd.Series, pd.Series]:
    return pd.Series(candles.high), pd.Series(candles.low), pd.Series(candles.close)


def _money_flow_multiplier(high: np.ndarray, low: np.ndarray, close: np.ndarray) -> np.ndarray:
    """((C - L) - (H - C)) / (H - L); cero cuando H == L"""
    spread = high - low
    with np.errstate(divide='ignore', invalid='ignore'):
        multiplier = ((close - low) - (high - close)) / spread
    return np.where(spread == 0, 0.0, multiplier)


def _rolling_extrema(candles: 'CandleSeries', tau: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    high, low, close = _ohlc(candles)
    highest = high.rolling(tau, min_periods=tau).max().to_numpy()
    lowest = low.rolling(tau, min_periods=tau).min().to_numpy()
    return highest, lowest, close.to_numpy()


# ==================== PROMEDIOS ====================

def sma(series, tau: int, name: str = None) -> IndicatorColumn:
    tau = _check_period(tau)
    values = pd.Series(_as_array(series)).rolling(tau, min_periods=tau).mean()
    return _column(name or f"MA{tau}", values, tau - 1)


def ema(series, tau: int, name: str = None, warmup: bool = True) -> IndicatorColumn:
    """EMA con alpha = 2/(tau+1), sembrada en el primer valor.

    Con ``warmup`` la columna reporta lookback tau-1 para alinear features;
    sin el, retorna la recursion completa con lookback 0.
    """
    tau = _check_period(tau)
    x = _as_array(series)
    if len(x) == 0:
        raise ParameterError("EMA requiere una serie no vacia")
    values = pd.Series(x).ewm(span=tau, adjust=False).mean()
    return _column(name or f"EMA{tau}", values, tau - 1 if warmup else 0)


def rsi(series, tau: int) -> IndicatorColumn:
    """RSI con suavizado de Wilder; primera media = promedio simple de tau cambios"""
    tau = _check_period(tau)
    x = _as_array(series)
    if len(x) <= tau:
        return _column(f"RSI{tau}", np.full(len(x), np.nan), tau)

    delta = np.diff(x)
    gains = np.clip(delta, 0.0, None)
    losses = np.clip(-delta, 0.0, None)

    def wilder(values: np.ndarray) -> np.ndarray:
        seeded = np.concatenate([[values[:tau].mean()], values[tau:]])
        smoothed = pd.Series(seeded).ewm(alpha=1.0 / tau, adjust=False).mean().to_numpy()
        return np.concatenate([np.full(tau, np.nan), smoothed])

    avg_gain = wilder(gains)
    avg_loss = wilder(losses)
    total = avg_gain + avg_loss
    with np.errstate(divide='ignore', invalid='ignore'):
        values = np.where(total == 0, 50.0, 100.0 * avg_gain / total)
    return _column(f"RSI{tau}", values, tau)


def macd(series, fast: int = 12, slow: int = 26) -> IndicatorColumn:
    x = _as_array(series)
    if len(x) < slow:
        raise InsufficientDataError('MACD', slow, len(x))
    fast_line = ema(x, fast, warmup=False).values
    slow_line = ema(x, slow, warmup=False).values
    return _column('MACD', fast_line - slow_line, slow - 1)


# ==================== MOMENTUM ====================

def momentum(series, tau: int) -> IndicatorColumn:
    tau = _check_period(tau)
    values = pd.Series(_as_array(series)).diff(tau)
    return _column(f"MOM{tau}", values, tau)


def proc(series, tau: int) -> IndicatorColumn:
    """Tasa de cambio porcentual; indefinida donde el valor de referencia es cero"""
    tau = _check_period(tau)
    x = pd.Series(_as_array(series))
    reference = x.shift(tau)
    with np.errstate(divide='ignore', invalid='ignore'):
        values = 100.0 * (x - reference) / reference
    values = values.where(reference != 0)
    return _column(f"PROC{tau}", values, tau)


def stochastic_k(candles: 'CandleSeries', tau: int) -> IndicatorColumn:
    tau = _check_period(tau)
    highest, lowest, close = _rolling_extrema(candles, tau)
    spread = highest - lowest
    with np.errstate(divide='ignore', invalid='ignore'):
        values = np.where(spread == 0, 50.0, 100.0 * (close - lowest) / spread)
    return _column(f"%K{tau}", values, tau - 1)


def stochastic_d(k_column: IndicatorColumn, tau: int = None, smoothing: int = 3) -> IndicatorColumn:
    """%D = media simple de 3 barras de %K"""
    if tau is None:
        match = re.search(r'(\d+)$', k_column.name)
        tau = int(match.group(1)) if match else smoothing
    smoothed = pd.Series(k_column.values).rolling(smoothing, min_periods=smoothing).mean()
    return _column(f"%D{tau}", smoothed, k_column.lookback + smoothing - 1)


def williams_r(candles: 'CandleSeries', tau: int) -> IndicatorColumn:
    tau = _check_period(tau)
    highest, lowest, close = _rolling_extrema(candles, tau)
    spread = highest - lowest
    with np.errstate(divide='ignore', invalid='ignore'):
        values = np.where(spread == 0, -50.0, -100.0 * (highest - close) / spread)
    return _column(f"%R{tau}", values, tau - 1)


def cci(candles: 'CandleSeries', tau: int) -> IndicatorColumn:
    tau = _check_period(tau)
    high, low, close = _ohlc(candles)
    typical = ((high + low + close) / 3.0).to_numpy()
    values = np.full(len(typical), np.nan)
    if len(typical) >= tau:
        windows = sliding_window_view(typical, tau)
        mean = windows.mean(axis=1)
        mad = np.abs(windows - mean[:, None]).mean(axis=1)
        # MAD numericamente nulo en ventanas constantes
        flat = mad <= 1e-12 * (np.abs(mean) + 1.0)
        with np.errstate(divide='ignore', invalid='ignore'):
            ratio = (typical[tau - 1:] - mean) / (CCI_CONSTANT * mad)
        values[tau - 1:] = np.where(flat, 0.0, ratio)
    return _column(f"CCI{tau}", values, tau - 1)


# ==================== VOLATILIDAD ====================

def bollinger(series, tau: int, ddof: int = 0) -> Tuple[IndicatorColumn, IndicatorColumn, IndicatorColumn]:
    tau = _check_period(tau, minimum=2)
    if ddof not in (0, 1):
        raise ParameterError(f"ddof debe ser 0 o 1, recibido {ddof}")
    x = pd.Series(_as_array(series))
    middle = x.rolling(tau, min_periods=tau).mean()
    sigma = x.rolling(tau, min_periods=tau).std(ddof=ddof)
    return (
        _column(f"BB_MA{tau}", middle, tau - 1),
        _column(f"BB_UP{tau}", middle + 2.0 * sigma, tau - 1),
        _column(f"BB_DN{tau}", middle - 2.0 * sigma, tau - 1),
    )


def atr(candles: 'CandleSeries', tau: int) -> IndicatorColumn:
    """Media aritmetica de los ultimos tau rangos verdaderos (sin suavizado de Wilder)"""
    tau = _check_period(tau)
    high, low, close = _ohlc(candles)
    previous = close.shift(1)
    true_range = pd.concat(
        [high - low, (high - previous).abs(), (low - previous).abs()], axis=1
    ).max(axis=1, skipna=False)
    values = true_range.rolling(tau, min_periods=tau).mean()
    return _column(f"ATR{tau}", values, tau)


# ==================== VOLUMEN ====================

def cmf(candles: 'CandleSeries', tau: int) -> IndicatorColumn:
    tau = _check_period(tau)
    volume = pd.Series(candles.volume)
    flow = pd.Series(_money_flow_multiplier(candles.high, candles.low, candles.close)) * volume
    flow_sum = flow.rolling(tau, min_periods=tau).sum().to_numpy()
    volume_sum = volume.rolling(tau, min_periods=tau).sum().to_numpy()
    with np.errstate(divide='ignore', invalid='ignore'):
        values = np.where(volume_sum == 0, 0.0, flow_sum / volume_sum)
    values = np.clip(values, -1.0, 1.0)
    return _column(f"CMF{tau}", values, tau - 1)


def obv(candles: 'CandleSeries') -> IndicatorColumn:
    close = candles.close
    volume = candles.volume
    signed = np.zeros(len(close))
    if len(close) > 1:
        signed[1:] = np.sign(np.diff(close)) * volume[1:]
    return _column('OBV', np.cumsum(signed), 0)


def adl(candles: 'CandleSeries') -> IndicatorColumn:
    multiplier = _money_flow_multiplier(candles.high, candles.low, candles.close)
    return _column('ADL', np.cumsum(multiplier * candles.volume), 0)


# ==================== TABLA DE FEATURES ====================

def compute_indicator_table(candles: 'CandleSeries', features: 'FeatureConfig') -> 'OrderedDict[str, IndicatorColumn]':
    """Calcula todas las columnas configuradas en el orden del vector de features"""
    close = candles.close
    table: 'OrderedDict[str, IndicatorColumn]' = OrderedDict()

    def add(column: IndicatorColumn):
        if column.name in table:
            raise ParameterError(f"Columna duplicada: {column.name}")
        table[column.name] = column

    if features.price_volume:
        add(IndicatorColumn('Close', close, 0))
        add(IndicatorColumn('Volume', candles.volume, 0))
    for tau in features.rsi:
        add(rsi(close, tau))
    for tau in features.mom:
        add(momentum(close, tau))
    if features.macd:
        add(macd(close))
    for tau in features.proc:
        add(proc(close, tau))
    for tau in features.ema:
        add(ema(close, tau))

    k_columns = [stochastic_k(candles, tau) for tau in features.stoch]
    for column in k_columns:
        add(column)
    for tau, column in zip(features.stoch, k_columns):
        add(stochastic_d(column, tau))

    for tau in features.bb:
        for column in bollinger(close, tau, ddof=features.bb_ddof):
            add(column)
    for tau in features.atr:
        add(atr(candles, tau))
    for tau in features.cci:
        add(cci(candles, tau))
    for tau in features.willr:
        add(williams_r(candles, tau))
    for tau in features.cmf:
        add(cmf(candles, tau))
    if features.obv:
        add(obv(candles))
    if features.adl:
        add(adl(candles))

    logger.info(f"Indicadores calculados: {len(table)} columnas sobre {len(close):,} velas")
    return table


def expected_lookbacks(features: 'FeatureConfig') -> 'OrderedDict[str, int]':
    """Calentamiento de cada columna configurada, sin calcular los indicadores"""
    lookbacks: 'OrderedDict[str, int]' = OrderedDict()
    if features.price_volume:
        lookbacks['Close'] = 0
        lookbacks['Volume'] = 0
    lookbacks.update((f"RSI{t}", t) for t in features.rsi)
    lookbacks.update((f"MOM{t}", t) for t in features.mom)
    if features.macd:
        lookbacks['MACD'] = 25
    lookbacks.update((f"PROC{t}", t) for t in features.proc)
    lookbacks.update((f"EMA{t}", t - 1) for t in features.ema)
    lookbacks.update((f"%K{t}", t - 1) for t in features.stoch)
    lookbacks.update((f"%D{t}", t + 1) for t in features.stoch)
    for t in features.bb:
        lookbacks.update((f"BB_{part}{t}", t - 1) for part in ('MA', 'UP', 'DN'))
    lookbacks.update((f"ATR{t}", t) for t in features.atr)
    lookbacks.update((f"CCI{t}", t - 1) for t in features.cci)
    lookbacks.update((f"%R{t}", t - 1) for t in features.willr)
    lookbacks.update((f"CMF{t}", t - 1) for t in features.cmf)
    if features.obv:
        lookbacks['OBV'] = 0
    if features.adl:
        lookbacks['ADL'] = 0
    return lookbacks
