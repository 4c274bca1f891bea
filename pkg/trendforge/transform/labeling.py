"""Etiquetas Buy/Sell por cruce de medias moviles.

La etiqueta en la barra i clasifica el regimen vigente (MA corta >= MA larga),
no un retorno futuro: features y etiqueta comparten la misma marca de tiempo.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from trendforge.utils.errors import ParameterError

logger = logging.getLogger(__name__)

BUY = 1
SELL = -1
TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class LabelColumn:
    values: np.ndarray
    short_len: int
    long_len: int

    @property
    def lookback(self) -> int:
        return self.long_len - 1

    def __len__(self) -> int:
        return len(self.values)

    def defined_values(self) -> np.ndarray:
        return self.values[self.lookback:].astype(np.int64)


def ma_crossover_labels(series, s: int = 10, l: int = 60) -> LabelColumn:  # noqa: E741
    """Y = +1 si MA_s >= MA_l, -1 en otro caso; indefinida para i < l - 1"""
    if s < 1 or s >= l:
        raise ParameterError(f"Se requiere 1 <= s < l, recibido s={s}, l={l}")

    closes = np.asarray(series, dtype=np.float64)
    if len(closes) < l:
        raise ParameterError(f"Serie de {len(closes)} barras; MA({s}, {l}) requiere al menos {l}")

    # sumas por ventana (sin suma corrida): la etiqueta en i depende solo de [i-l+1, i]
    short_sum = sliding_window_view(closes, s).sum(axis=1)[l - s:]
    long_sum = sliding_window_view(closes, l).sum(axis=1)
    # MA_s >= MA_l  <=>  l * sum_s >= s * sum_l; empates dentro del redondeo cuentan como Buy
    lhs = l * short_sum
    rhs = s * long_sum
    buy = (lhs >= rhs) | np.isclose(lhs, rhs, rtol=TIE_RTOL, atol=0.0)

    values = np.full(len(closes), np.nan)
    values[l - 1:] = np.where(buy, float(BUY), float(SELL))

    return LabelColumn(values=values, short_len=s, long_len=l)


def encode_binary(labels: Union[LabelColumn, np.ndarray]) -> np.ndarray:
    """+1 (Buy) -> 1, -1 (Sell) -> 0"""
    values = labels.values if isinstance(labels, LabelColumn) else np.asarray(labels, dtype=np.float64)
    if np.isnan(values).any():
        raise ParameterError("Etiquetas indefinidas: recortar el calentamiento antes de codificar")
    if not np.isin(values, (BUY, SELL)).all():
        raise ParameterError("Las etiquetas deben ser +1 o -1")
    return (values == BUY).astype(np.int8)


def decode_binary(binary) -> np.ndarray:
    """1 -> +1 (Buy), 0 -> -1 (Sell)"""
    binary = np.asarray(binary)
    if not np.isin(binary, (0, 1)).all():
        raise ParameterError("Las etiquetas binarias deben ser 0 o 1")
    return np.where(binary == 1, BUY, SELL).astype(np.int8)


def signal_counts(labels: Union[LabelColumn, np.ndarray]) -> Dict:
    """Conteo de senales Buy/Sell sobre la parte definida"""
    if isinstance(labels, LabelColumn):
        values = labels.defined_values()
    else:
        values = np.asarray(labels)
        values = values[~np.isnan(values.astype(np.float64))]

    buy = int((values == BUY).sum())
    sell = int((values == SELL).sum())
    total = buy + sell
    imbalance = abs(buy - sell) / total if total else 0.0

    if total and imbalance >= 0.1:
        logger.warning(f"  Senales desbalanceadas: Buy={buy:,}, Sell={sell:,} ({imbalance:.2%})")
    else:
        logger.info(f"  Senales: Buy={buy:,}, Sell={sell:,} (desbalance {imbalance:.2%})")

    return {'buy': buy, 'sell': sell, 'total': total, 'imbalance': imbalance}
