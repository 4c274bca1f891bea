import logging

import numpy as np
import pytest

from trendforge.transform.indicators import sma
from trendforge.transform.labeling import (
    BUY,
    SELL,
    decode_binary,
    encode_binary,
    ma_crossover_labels,
    signal_counts,
)
from trendforge.utils.errors import ParameterError

logger = logging.getLogger(__name__)


# ============================================================================
# TEST 1-3: REGLA DE CRUCE
# ============================================================================

def test_01_rising_series_is_all_buy():
    labels = ma_crossover_labels(np.arange(1, 101, dtype=float), s=2, l=5)

    assert labels.lookback == 4
    assert np.isnan(labels.values[:4]).all()
    assert (labels.defined_values() == BUY).all()
    logger.info("Test 1 PASS: serie creciente -> Buy")


def test_02_constant_series_takes_equality_branch():
    labels = ma_crossover_labels(np.full(80, 42.0))

    assert len(labels.defined_values()) == 80 - 59
    assert (labels.defined_values() == BUY).all()
    logger.info("Test 2 PASS: MA_s == MA_l -> Buy")


def test_03_matches_direct_comparison():
    rng = np.random.default_rng(5)
    close = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, 400)))

    labels = ma_crossover_labels(close, s=10, l=60)
    short_ma, long_ma = sma(close, 10).values, sma(close, 60).values
    expected = np.where(short_ma[59:] >= long_ma[59:], BUY, SELL)

    np.testing.assert_array_equal(labels.defined_values(), expected)
    assert set(np.unique(labels.defined_values())) == {BUY, SELL}
    logger.info("Test 3 PASS: etiquetas == comparacion directa de medias")


def test_04_invalid_parameters():
    with pytest.raises(ParameterError):
        ma_crossover_labels(np.arange(100.0), s=60, l=60)
    with pytest.raises(ParameterError):
        ma_crossover_labels(np.arange(100.0), s=0, l=5)
    with pytest.raises(ParameterError):
        ma_crossover_labels(np.arange(30.0), s=10, l=60)
    logger.info("Test 4 PASS: parametros invalidos rechazados")


# ============================================================================
# TEST 5-6: CODIFICACION Y CONTEOS
# ============================================================================

def test_05_binary_encoding():
    encoded = encode_binary(np.array([1, -1, 1]))
    assert list(encoded) == [1, 0, 1]
    assert list(decode_binary(encoded)) == [1, -1, 1]

    with pytest.raises(ParameterError):
        encode_binary(np.array([1.0, np.nan]))
    with pytest.raises(ParameterError):
        encode_binary(np.array([1, 0, -1]))
    with pytest.raises(ParameterError):
        decode_binary(np.array([0, 2]))
    logger.info("Test 5 PASS: +1 -> 1, -1 -> 0 y rechazos")


def test_06_signal_counts():
    counts = signal_counts(np.array([np.nan, 1, 1, -1, 1]))
    assert counts == {'buy': 3, 'sell': 1, 'total': 4, 'imbalance': 0.5}

    labels = ma_crossover_labels(np.full(70, 1.0), s=2, l=5)
    assert signal_counts(labels)['total'] == 66
    logger.info("Test 6 PASS: conteo de senales Buy/Sell")


# ============================================================================
# TEST 7-9: EMPATES, ESCALA Y LOCALIDAD
# ============================================================================

def tick_series(n: int, seed: int) -> np.ndarray:
    """Precios en ticks de 0.1 (enteros / 10) con muchos tramos planos"""
    rng = np.random.default_rng(seed)
    ticks = 1000 + np.cumsum(rng.choice([-1, 0, 0, 1], size=n))
    return ticks


def exact_labels(ticks: np.ndarray, s: int, l: int) -> np.ndarray:  # noqa: E741
    """MA_s >= MA_l en aritmetica entera: l * sum_s >= s * sum_l"""
    out = []
    for i in range(l - 1, len(ticks)):
        short_sum = int(ticks[i - s + 1:i + 1].sum())
        long_sum = int(ticks[i - l + 1:i + 1].sum())
        out.append(BUY if l * short_sum >= s * long_sum else SELL)
    return np.array(out)


def test_07_exact_ties_on_tick_prices_are_buy():
    # ventana larga con media 100.2 y ventana corta con la misma media
    closes = np.array([100.1, 100.3] * 25 + [100.0, 100.4] * 5)
    assert ma_crossover_labels(closes, s=10, l=60).values[-1] == BUY

    ties = 0
    for seed in range(50):
        ticks = tick_series(400, seed)
        labels = ma_crossover_labels(ticks / 10.0, s=10, l=60)
        expected = exact_labels(ticks, 10, 60)
        np.testing.assert_array_equal(labels.defined_values(), expected)
        ties += sum(
            60 * int(ticks[i - 9:i + 1].sum()) == 10 * int(ticks[i - 59:i + 1].sum())
            for i in range(59, 400)
        )
    logger.info(f"Test 7 PASS: etiquetas == regla exacta en 50 series ({ties} empates exactos)")


def test_08_positive_scale_invariance():
    for seed in range(20):
        closes = tick_series(400, 100 + seed) / 10.0
        reference = ma_crossover_labels(closes, s=10, l=60).defined_values()
        for factor in (0.1, 3.0, 1e-3, 7.3):
            scaled = ma_crossover_labels(closes * factor, s=10, l=60).defined_values()
            np.testing.assert_array_equal(scaled, reference)
    logger.info("Test 8 PASS: etiquetas invariantes a escala positiva")


def test_09_label_depends_only_on_its_window():
    rng = np.random.default_rng(9)
    closes = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, 300)))
    reference = ma_crossover_labels(closes, s=10, l=60).values

    for i in (59, 150, 299):
        perturbed = closes.copy()
        perturbed[:i - 59] *= rng.uniform(0.5, 2.0, i - 59)
        perturbed[i + 1:] *= rng.uniform(0.5, 2.0, len(closes) - i - 1)
        assert ma_crossover_labels(perturbed, s=10, l=60).values[i] == reference[i]
    logger.info("Test 9 PASS: etiqueta en i depende solo de la ventana [i-l+1, i]")
