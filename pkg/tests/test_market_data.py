import logging

import numpy as np
import pytest
import requests

from conftest import INTERVAL_MS, START_MS, make_candles, make_ohlcv_frame
from trendforge.config.settings import ApiConfig
from trendforge.extract.market_data import (
    Candle,
    CandleSeries,
    KlinesFetcher,
    fetch_klines,
    gap_report,
    parse_interval,
    parse_klines_csv,
    write_klines_csv,
)
from trendforge.utils.errors import (
    CandleValidationError,
    EmptyInputError,
    FetchError,
    ParameterError,
    ParseError,
)

logger = logging.getLogger(__name__)

VALID_ROWS = [
    "1612137600000,33092.97,33106.33,32970.00,33000.01,512.3,1612138499999,16943210.1,9876,250.1,8270000.5,0",
    "1612138500000,33000.01,33150.00,32990.00,33120.50,410.7,1612139399999,13589000.2,8765,200.4,6630000.1,0",
    "1612139400000,33120.50,33200.00,33050.00,33080.00,380.2,1612140299999,12580000.7,7654,190.0,6290000.0,0",
]


# ============================================================================
# STUBS HTTP
# ============================================================================

class StubResponse:

    def __init__(self, status_code=200, payload=None, headers=None):
        self.status_code = status_code
        self._payload = payload if payload is not None else []
        self.headers = headers or {}

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"HTTP {self.status_code}")

    def json(self):
        return self._payload


class KlinesStub:
    """Sesion falsa que sirve klines sinteticas para [startTime, endTime]"""

    def __init__(self, failures=None):
        self.calls = []
        self.failures = list(failures or [])

    def get(self, url, params=None, timeout=None):
        self.calls.append(dict(params))
        if self.failures:
            failure = self.failures.pop(0)
            if isinstance(failure, Exception):
                raise failure
            return failure

        first = params['startTime']
        last = params['endTime']
        times = list(range(first, last + 1, INTERVAL_MS))[:params['limit']]
        rows = []
        for t in times:
            price = 30000.0 + (t - START_MS) / INTERVAL_MS
            rows.append([t, str(price), str(price + 5), str(price - 5), str(price + 1), "10.5",
                         t + INTERVAL_MS - 1, "315000.0", 42, "5.0", "150000.0", "0"])
        return StubResponse(200, rows)


@pytest.fixture
def sleeps():
    return []


def make_fetcher(session, sleeps) -> KlinesFetcher:
    return KlinesFetcher(api=ApiConfig(base_url='http://stub.local'), session=session, sleep=sleeps.append)


# ============================================================================
# TEST 1-5: PARSEO DE CSV
# ============================================================================

def test_01_parse_three_valid_rows(tmp_path):
    path = tmp_path / 'klines.csv'
    path.write_text("\n".join(VALID_ROWS) + "\n")

    series = parse_klines_csv(path, '15m')

    assert len(series) == 3
    assert series.interval_ms == 900_000
    assert series.close[1] == pytest.approx(33120.50)
    assert series.open_time.dtype == np.int64
    logger.info("Test 1 PASS: 3 velas parseadas a 15m")


def test_02_high_below_low_names_row(tmp_path):
    rows = list(VALID_ROWS)
    rows[1] = "1612138500000,33000.01,32000.00,32990.00,33120.50,410.7,1612139399999,1.0,8765,1.0,1.0,0"
    path = tmp_path / 'klines.csv'
    path.write_text("\n".join(rows) + "\n")

    with pytest.raises(CandleValidationError) as excinfo:
        parse_klines_csv(path, '15m')

    assert excinfo.value.row == 2
    logger.info("Test 2 PASS: vela invalida reportada en fila 2")


def test_03_malformed_numeric_field(tmp_path):
    rows = list(VALID_ROWS)
    rows[2] = rows[2].replace("33080.00", "abc")
    path = tmp_path / 'klines.csv'
    path.write_text("\n".join(rows) + "\n")

    with pytest.raises(ParseError) as excinfo:
        parse_klines_csv(path, '15m')

    assert excinfo.value.row == 3
    assert 'close' in str(excinfo.value)
    logger.info("Test 3 PASS: campo no numerico con numero de fila")


def test_04_empty_and_missing_files(tmp_path):
    empty = tmp_path / 'empty.csv'
    empty.write_text("")

    with pytest.raises(EmptyInputError):
        parse_klines_csv(empty, '15m')
    with pytest.raises(FileNotFoundError):
        parse_klines_csv(tmp_path / 'missing.csv', '15m')

    binary = tmp_path / 'binary.csv'
    binary.write_bytes(VALID_ROWS[0].encode() + b"\n\xff\xfe,1,2\n")
    with pytest.raises(ParseError) as excinfo:
        parse_klines_csv(binary, '15m')
    assert excinfo.value.row == 2
    logger.info("Test 4 PASS: archivo vacio, inexistente y con bytes no UTF-8")


def test_05_duplicates_dropped_keep_first_and_sorted(tmp_path):
    duplicate = VALID_ROWS[0].replace("33000.01,512.3", "33000.01,999.9")
    rows = [VALID_ROWS[2], VALID_ROWS[0], duplicate, VALID_ROWS[1]]
    path = tmp_path / 'klines.csv'
    path.write_text("\n".join(rows) + "\n")

    series = parse_klines_csv(path, '15m')

    assert len(series) == 3
    assert series.duplicates_dropped == 1
    assert np.all(np.diff(series.open_time) > 0)
    assert series.volume[0] == pytest.approx(512.3)
    logger.info("Test 5 PASS: duplicados descartados, orden estrictamente creciente")


# ============================================================================
# TEST 6-8: CACHE Y HUECOS
# ============================================================================

def test_06_write_then_parse_is_identity(tmp_path):
    series = make_candles(250, seed=3)
    path = write_klines_csv(series, tmp_path / 'candles.csv')

    restored = parse_klines_csv(path, '15m')

    assert restored == series
    assert path.read_bytes().count(b'\r') == 0
    assert len(path.read_text().splitlines()[0].split(',')) == 12
    logger.info("Test 6 PASS: parse(write(serie)) == serie")


def test_07_gap_report_counts_missing_bars():
    frame = make_ohlcv_frame(20)
    frame = frame.drop(index=[5, 6, 13]).reset_index(drop=True)
    series = CandleSeries.from_frame(frame, '15m')

    missing = gap_report(series)
    assert missing == [START_MS + 5 * INTERVAL_MS, START_MS + 6 * INTERVAL_MS, START_MS + 13 * INTERVAL_MS]

    end = START_MS + 25 * INTERVAL_MS
    assert len(gap_report(series, START_MS, end)) == 25 - len(series)
    logger.info("Test 7 PASS: reporte de huecos")


def test_08_parse_interval():
    assert parse_interval('15m') == 900_000
    assert parse_interval('1h') == 3_600_000
    assert parse_interval(900_000) == 900_000
    with pytest.raises(ParameterError):
        parse_interval('7m')
    logger.info("Test 8 PASS: intervalos soportados")


# ============================================================================
# TEST 9-13: DESCARGA REST
# ============================================================================

def test_09_empty_range_makes_no_requests(sleeps):
    session = KlinesStub()
    series = make_fetcher(session, sleeps).fetch('BTCUSDT', '15m', START_MS, START_MS)

    assert len(series) == 0
    assert session.calls == []
    logger.info("Test 9 PASS: rango vacio sin peticiones")


def test_10_pagination_1500_bars_two_requests(sleeps):
    session = KlinesStub()
    end = START_MS + 1500 * INTERVAL_MS

    series = make_fetcher(session, sleeps).fetch('BTCUSDT', '15m', START_MS, end)

    assert len(series) == 1500
    assert [call['limit'] for call in session.calls] == [1000, 500]
    assert session.calls[1]['startTime'] == START_MS + 1000 * INTERVAL_MS
    assert all(call['endTime'] == end - 1 for call in session.calls)
    assert gap_report(series) == []
    logger.info("Test 10 PASS: 1500 velas en 2 peticiones (1000 + 500)")


def test_11_retry_with_exponential_backoff(sleeps):
    session = KlinesStub(failures=[requests.ConnectionError("down"), StubResponse(500)])
    end = START_MS + 10 * INTERVAL_MS

    series = make_fetcher(session, sleeps).fetch('BTCUSDT', '15m', START_MS, end)

    assert len(series) == 10
    assert len(session.calls) == 3
    assert sleeps == [1.0, 2.0]
    logger.info("Test 11 PASS: reintentos con backoff 1s, 2s")


def test_12_rate_limit_waits_retry_after(sleeps):
    session = KlinesStub(failures=[StubResponse(429, headers={'Retry-After': '7'})])
    end = START_MS + 4 * INTERVAL_MS

    series = make_fetcher(session, sleeps).fetch('BTCUSDT', '15m', START_MS, end)

    assert len(series) == 4
    assert sleeps == [7.0]
    logger.info("Test 12 PASS: espera segun Retry-After")


def test_13_partial_data_after_failures(sleeps):
    end = START_MS + 1500 * INTERVAL_MS

    class FailingAfterFirstPage(KlinesStub):
        def get(self, url, params=None, timeout=None):
            if self.calls:
                self.calls.append(dict(params))
                raise requests.ConnectionError("cortado")
            return super().get(url, params, timeout)

    session = FailingAfterFirstPage()
    series = make_fetcher(session, sleeps).fetch('BTCUSDT', '15m', START_MS, end)

    assert len(series) == 1000
    assert len(gap_report(series)) == 500
    logger.info("Test 13 PASS: datos parciales con reporte de huecos")


def test_14_total_failure_raises(sleeps):
    session = KlinesStub(failures=[requests.ConnectionError("x")] * 3)

    with pytest.raises(FetchError):
        make_fetcher(session, sleeps).fetch('BTCUSDT', '15m', START_MS, START_MS + 5 * INTERVAL_MS)
    assert len(sleeps) == 2
    logger.info("Test 14 PASS: FetchError tras 3 intentos")


def test_15_fetch_klines_writes_cache(tmp_path, sleeps):
    session = KlinesStub()
    target = tmp_path / 'candles.csv'
    end = START_MS + 30 * INTERVAL_MS

    series = fetch_klines('BTCUSDT', '15m', START_MS, end, cache_path=target,
                          fetcher=make_fetcher(session, sleeps))

    assert target.exists()
    assert parse_klines_csv(target, '15m') == series
    logger.info("Test 15 PASS: cache CSV escrito y releido")


def test_16_candle_records_round_trip():
    series = make_candles(20, seed=16)
    candles = series.candles

    assert len(candles) == 20
    assert isinstance(candles[0], Candle)
    assert candles[0].open_time == START_MS
    assert candles[-1].close_time == START_MS + 20 * INTERVAL_MS - 1
    assert CandleSeries.from_candles(candles, '15m') == series
    logger.info("Test 16 PASS: CandleSeries -> Candle -> CandleSeries")
