import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Configuración de paths
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from trendforge.extract.market_data import CANDLE_COLUMNS, CandleSeries  # noqa: E402

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)

START_MS = 1_612_137_600_000  # 2021-02-01 00:00 UTC
INTERVAL_MS = 900_000


def make_ohlcv_frame(n: int, seed: int = 0, start: int = START_MS, constant: float = None) -> pd.DataFrame:
    """Velas sinteticas validas (camino aleatorio geometrico) en el layout de klines"""
    rng = np.random.default_rng(seed)
    if constant is not None:
        close = np.full(n, float(constant))
        open_ = close.copy()
        high = close.copy()
        low = close.copy()
    else:
        close = 30_000.0 * np.exp(np.cumsum(rng.normal(0.0, 0.003, n)))
        open_ = np.concatenate([[close[0] * (1 + rng.normal(0.0, 0.001))], close[:-1]])
        high = np.maximum(open_, close) * (1 + np.abs(rng.normal(0.0, 0.001, n)))
        low = np.minimum(open_, close) * (1 - np.abs(rng.normal(0.0, 0.001, n)))
    volume = rng.uniform(1.0, 100.0, n)
    open_time = start + INTERVAL_MS * np.arange(n, dtype=np.int64)

    return pd.DataFrame({
        'open_time': open_time,
        'open': open_,
        'high': high,
        'low': low,
        'close': close,
        'volume': volume,
        'close_time': open_time + INTERVAL_MS - 1,
        'quote_asset_volume': volume * close,
        'num_trades': rng.integers(1, 500, n),
        'taker_buy_base_volume': volume * 0.5,
        'taker_buy_quote_volume': volume * close * 0.5,
    }, columns=CANDLE_COLUMNS)


def make_candles(n: int, seed: int = 0, start: int = START_MS, constant: float = None) -> CandleSeries:
    return CandleSeries.from_frame(make_ohlcv_frame(n, seed, start, constant), '15m')


def candles_from_ohlc(high, low, close, volume=None, open_=None) -> CandleSeries:
    """Serie a partir de arreglos OHLC explicitos (open por defecto = close)"""
    close = np.asarray(close, dtype=float)
    n = len(close)
    frame = make_ohlcv_frame(n)
    frame['close'] = close
    frame['open'] = close if open_ is None else np.asarray(open_, dtype=float)
    frame['high'] = np.asarray(high, dtype=float)
    frame['low'] = np.asarray(low, dtype=float)
    frame['volume'] = np.ones(n) if volume is None else np.asarray(volume, dtype=float)
    return CandleSeries.from_frame(frame, '15m')


@pytest.fixture(scope="module")
def candle_factory():
    """Fixture: constructor de velas sinteticas"""
    return make_candles
