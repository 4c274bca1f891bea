import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import requests
from tqdm import tqdm

from trendforge.config.settings import ApiConfig
from trendforge.utils.errors import (
    CandleValidationError,
    EmptyInputError,
    FetchError,
    ParameterError,
    ParseError,
)

logger = logging.getLogger(__name__)

# Orden de columnas del volcado de klines (12 campos, sin encabezado)
KLINE_COLUMNS = [
    'open_time', 'open', 'high', 'low', 'close', 'volume', 'close_time',
    'quote_asset_volume', 'num_trades', 'taker_buy_base_volume',
    'taker_buy_quote_volume', 'ignore'
]
CANDLE_COLUMNS = KLINE_COLUMNS[:11]
INT_COLUMNS = ('open_time', 'close_time', 'num_trades')
FLOAT_COLUMNS = tuple(c for c in CANDLE_COLUMNS if c not in INT_COLUMNS)

INTERVALS_MS = {
    '1m': 60_000, '3m': 180_000, '5m': 300_000, '15m': 900_000, '30m': 1_800_000,
    '1h': 3_600_000, '2h': 7_200_000, '4h': 14_400_000, '6h': 21_600_000,
    '8h': 28_800_000, '12h': 43_200_000, '1d': 86_400_000,
}


def parse_interval(interval) -> int:
    """Convierte '15m' (o milisegundos) a milisegundos"""
    if isinstance(interval, (int, np.integer)) and not isinstance(interval, bool):
        if int(interval) not in INTERVALS_MS.values():
            raise ParameterError(f"Intervalo no soportado: {interval} ms")
        return int(interval)
    if interval not in INTERVALS_MS:
        raise ParameterError(f"Intervalo no soportado: {interval}")
    return INTERVALS_MS[interval]


def interval_name(interval_ms: int) -> str:
    for name, ms in INTERVALS_MS.items():
        if ms == interval_ms:
            return name
    raise ParameterError(f"Intervalo no soportado: {interval_ms} ms")


@dataclass(frozen=True)
class Candle:
    """Una vela OHLCV con los extras del exchange"""
    open_time: int
    open: float
    high: float
    low: float
    close: float
    volume: float
    close_time: int
    quote_asset_volume: float
    num_trades: int
    taker_buy_base_volume: float
    taker_buy_quote_volume: float


@dataclass(frozen=True, eq=False)
class CandleSeries:
    """Serie ordenada de velas; se trata como inmutable despues de construida"""
    frame: pd.DataFrame
    interval_ms: int
    duplicates_dropped: int = 0
    expected_range: Optional[Tuple[int, int]] = None

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        interval,
        expected_range: Optional[Tuple[int, int]] = None
    ) -> 'CandleSeries':
        """Valida, ordena y elimina duplicados (se conserva la primera aparicion)"""
        interval_ms = parse_interval(interval)
        frame = _coerce_columns(frame)
        _validate_candles(frame)

        ordered = frame.sort_values('open_time', kind='mergesort')
        duplicated = ordered['open_time'].duplicated(keep='first')
        duplicates = int(duplicated.sum())
        if duplicates > 0:
            logger.warning(f"  Eliminando {duplicates:,} velas con open_time duplicado")
        ordered = ordered.loc[~duplicated].reset_index(drop=True)

        return cls(frame=ordered, interval_ms=interval_ms,
                   duplicates_dropped=duplicates, expected_range=expected_range)

    @classmethod
    def from_candles(cls, candles: List[Candle], interval) -> 'CandleSeries':
        frame = pd.DataFrame([c.__dict__ for c in candles], columns=CANDLE_COLUMNS)
        return cls.from_frame(frame, interval)

    @classmethod
    def empty(cls, interval, expected_range: Optional[Tuple[int, int]] = None) -> 'CandleSeries':
        frame = _coerce_columns(pd.DataFrame({c: [] for c in CANDLE_COLUMNS}))
        return cls(frame=frame, interval_ms=parse_interval(interval), expected_range=expected_range)

    def __len__(self) -> int:
        return len(self.frame)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CandleSeries):
            return NotImplemented
        return self.interval_ms == other.interval_ms and self.frame.equals(other.frame)

    @property
    def candles(self) -> List[Candle]:
        return [Candle(**row) for row in self.to_frame().to_dict('records')]

    def to_frame(self) -> pd.DataFrame:
        return self.frame.copy()

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy(copy=True)

    @property
    def open_time(self) -> np.ndarray:
        return self.column('open_time')

    @property
    def open(self) -> np.ndarray:
        return self.column('open').astype(float)

    @property
    def high(self) -> np.ndarray:
        return self.column('high').astype(float)

    @property
    def low(self) -> np.ndarray:
        return self.column('low').astype(float)

    @property
    def close(self) -> np.ndarray:
        return self.column('close').astype(float)

    @property
    def volume(self) -> np.ndarray:
        return self.column('volume').astype(float)

    def gaps(self, start: Optional[int] = None, end: Optional[int] = None) -> List[int]:
        return gap_report(self, start, end)


def gap_report(series: CandleSeries, start: Optional[int] = None, end: Optional[int] = None) -> List[int]:
    """open_time esperados que faltan en [start, end)

    Sin limites explicitos se usa el rango solicitado al exchange o, en su
    defecto, el rango entre la primera y la ultima vela.
    """
    if start is None and end is None and series.expected_range is not None:
        start, end = series.expected_range
    present = series.open_time
    if start is None:
        if len(present) == 0:
            return []
        start = int(present[0])
    if end is None:
        if len(present) == 0:
            return []
        end = int(present[-1]) + series.interval_ms

    expected = np.arange(int(start), int(end), series.interval_ms, dtype=np.int64)
    missing = np.setdiff1d(expected, present, assume_unique=True)
    return [int(t) for t in missing]


# ==================== CSV ====================

def parse_klines_csv(path, interval) -> CandleSeries:
    """Lee un volcado de klines (12 columnas, sin encabezado) y lo valida"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Archivo no encontrado: {path}")

    logger.info(f"Leyendo klines: {path}")

    content = path.read_bytes()
    try:
        text = content.decode('utf-8')
    except UnicodeDecodeError as e:
        row = content.count(b'\n', 0, e.start) + 1
        raise ParseError(f"bytes no UTF-8 en la posicion {e.start}", row=row) from e

    if not text.strip():
        raise EmptyInputError(f"Archivo vacio: {path}")

    try:
        raw = pd.read_csv(io.StringIO(text), header=None, dtype=str, skip_blank_lines=True,
                          keep_default_na=False)
    except pd.errors.ParserError as e:
        raise ParseError(f"CSV mal formado: {e}") from e

    if raw.shape[1] < len(CANDLE_COLUMNS):
        raise ParseError(
            f"se esperan al menos {len(CANDLE_COLUMNS)} campos por fila, encontrados {raw.shape[1]}", row=1
        )

    raw = raw.iloc[:, :len(CANDLE_COLUMNS)]
    raw.columns = CANDLE_COLUMNS

    frame = pd.DataFrame(index=raw.index)
    for col in CANDLE_COLUMNS:
        text = raw[col].str.strip()
        values = pd.to_numeric(text, errors='coerce')
        invalid = values.isna() | ~np.isfinite(values.astype(float))
        if col in INT_COLUMNS:
            invalid |= values.astype(float) % 1 != 0
        if invalid.any():
            position = int(np.flatnonzero(invalid.to_numpy())[0])
            raise ParseError(f"campo {col} no numerico: '{raw[col].iloc[position]}'", row=position + 1)
        # float() redondea correctamente; to_numeric puede perder el ultimo bit
        frame[col] = values if col in INT_COLUMNS else text.astype(float)

    series = CandleSeries.from_frame(frame, interval)

    gaps = series.gaps()
    logger.info(f"  Velas: {len(series):,} | duplicadas eliminadas: {series.duplicates_dropped:,}")
    if gaps:
        logger.warning(f"  Huecos detectados: {len(gaps):,} velas faltantes (no se imputan)")

    return series


def write_klines_csv(series: CandleSeries, path) -> Path:
    """Escribe la serie en el formato de 12 columnas del volcado de klines"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    out = pd.DataFrame(index=series.frame.index)
    for col in CANDLE_COLUMNS:
        values = series.frame[col].to_numpy()
        if col in INT_COLUMNS:
            out[col] = [str(int(v)) for v in values]
        else:
            # repr de float: representacion decimal mas corta que preserva el valor
            out[col] = [repr(float(v)) for v in values]
    out['ignore'] = '0'

    out.to_csv(path, header=False, index=False, lineterminator='\n')
    logger.info(f"Archivo guardado: {path} ({len(series):,} velas)")
    return path


def _coerce_columns(frame: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in CANDLE_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"Columnas faltantes: {missing}")
    out = pd.DataFrame(index=frame.index)
    for col in CANDLE_COLUMNS:
        if col in INT_COLUMNS:
            out[col] = pd.to_numeric(frame[col]).astype(np.int64)
        else:
            out[col] = pd.to_numeric(frame[col]).astype(np.float64)
    return out.reset_index(drop=True)


def _validate_candles(frame: pd.DataFrame) -> None:
    """Verifica los invariantes de cada vela; reporta la primera fila invalida"""
    if frame.empty:
        return

    checks = [
        (frame['high'] < frame['low'], "high < low"),
        (frame['low'] > frame[['open', 'close']].min(axis=1), "low > min(open, close)"),
        (frame['high'] < frame[['open', 'close']].max(axis=1), "high < max(open, close)"),
        (frame['volume'] < 0, "volume negativo"),
        (frame['num_trades'] < 0, "num_trades negativo"),
        (frame['close_time'] <= frame['open_time'], "close_time <= open_time"),
    ]

    first_row, first_reason = None, None
    for mask, reason in checks:
        hits = np.flatnonzero(mask.to_numpy())
        if len(hits) and (first_row is None or hits[0] < first_row):
            first_row, first_reason = int(hits[0]), reason

    if first_row is not None:
        raise CandleValidationError(f"vela invalida ({first_reason})", row=first_row + 1)


# ==================== REST ====================

@dataclass
class KlinesFetcher:
    """Descarga klines paginadas del endpoint REST con reintentos"""
    api: ApiConfig = field(default_factory=ApiConfig.from_env)
    session: Optional[requests.Session] = None
    sleep: Callable[[float], None] = time.sleep
    requests_made: int = 0

    def __post_init__(self):
        if self.session is None:
            self.session = requests.Session()

    def fetch(self, symbol: str, interval, start: int, end: int) -> CandleSeries:
        interval_ms = parse_interval(interval)
        interval_str = interval if isinstance(interval, str) else interval_name(interval_ms)
        start, end = int(start), int(end)

        if start > end:
            raise ParameterError(f"Rango invalido: start={start} > end={end}")
        if start == end:
            logger.info("Rango vacio: no se realizan peticiones")
            return CandleSeries.empty(interval_ms, expected_range=(start, end))

        expected_bars = math.ceil((end - start) / interval_ms)
        pages = math.ceil(expected_bars / self.api.page_limit)
        logger.info(f"Descargando {symbol} {interval_str}: {expected_bars:,} velas esperadas, ~{pages} paginas")

        rows: List[list] = []
        cursor = start
        with tqdm(total=expected_bars, desc=f"klines {symbol}", unit="bar") as progress:
            while cursor < end:
                remaining = math.ceil((end - cursor) / interval_ms)
                params = {
                    'symbol': symbol,
                    'interval': interval_str,
                    'startTime': cursor,
                    'endTime': end - 1,
                    'limit': min(self.api.page_limit, remaining),
                }
                try:
                    page = self._request_page(params)
                except FetchError as e:
                    if not rows:
                        raise
                    logger.error(f"Descarga interrumpida, se retornan datos parciales: {e}")
                    break

                page = [r for r in page if start <= int(r[0]) < end]
                if not page:
                    logger.warning(f"Pagina vacia en startTime={cursor}; fin de la descarga")
                    break

                rows.extend(page)
                progress.update(len(page))
                next_cursor = int(page[-1][0]) + interval_ms
                if next_cursor <= cursor:
                    break
                cursor = next_cursor

        if not rows:
            return CandleSeries.empty(interval_ms, expected_range=(start, end))

        frame = pd.DataFrame([r[:len(CANDLE_COLUMNS)] for r in rows], columns=CANDLE_COLUMNS)
        series = CandleSeries.from_frame(frame, interval_ms, expected_range=(start, end))
        self._log_summary(series)
        return series

    def _request_page(self, params: Dict) -> list:
        """GET de una pagina; backoff exponencial y espera por limite de tasa"""
        url = self.api.klines_url()
        last_error = None

        for attempt in range(self.api.max_attempts):
            wait = self.api.backoff_base * (2 ** attempt)
            try:
                self.requests_made += 1
                response = self.session.get(url, params=params, timeout=self.api.timeout)
                if response.status_code in (418, 429):
                    retry_after = response.headers.get('Retry-After')
                    wait = float(retry_after) if retry_after else wait
                    last_error = f"limite de tasa (HTTP {response.status_code})"
                    logger.warning(f"  {last_error}; esperando {wait:.1f}s")
                    if attempt < self.api.max_attempts - 1:
                        self.sleep(wait)
                    continue
                response.raise_for_status()
                return response.json()
            except requests.RequestException as e:
                last_error = str(e)
                logger.warning(f"  Intento {attempt + 1}/{self.api.max_attempts} fallido: {last_error}")
                if attempt < self.api.max_attempts - 1:
                    self.sleep(wait)

        raise FetchError(f"Fallo la descarga tras {self.api.max_attempts} intentos: {last_error}")

    def _log_summary(self, series: CandleSeries):
        gaps = series.gaps()
        logger.info(f"Resumen: {len(series):,} velas, {self.requests_made} peticiones, "
                    f"{len(gaps):,} velas faltantes")
        if gaps:
            logger.warning(f"  Primer hueco en open_time={gaps[0]}")


def fetch_klines(
    symbol: str,
    interval,
    start: int,
    end: int,
    cache_path=None,
    fetcher: Optional[KlinesFetcher] = None
) -> CandleSeries:
    """Descarga el rango [start, end) y lo escribe en el cache CSV"""
    fetcher = fetcher or KlinesFetcher()
    series = fetcher.fetch(symbol, interval, start, end)
    if cache_path is not None:
        write_klines_csv(series, cache_path)
    return series
