"""Connectors for the four public data-source APIs.

A :class:`SourceQuery` is a typed, validated request against one source.
Execution goes through an injected transport so every test (and any
offline run) can use recorded fixtures; live mode is the same code path
with an HTTP client behind it. Responses are normalized into
:class:`~shiftminer.series.TimeSeries` values at the original stage.

Credentials come from the environment only (``FRED_API_KEY``,
``EIA_API_KEY``); they are attached to live requests but excluded from
fixture keys and never written to fixture files.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .series import Source, Stage, TimeSeries, make_series_id

logger = logging.getLogger(__name__)

FRED_OBSERVATIONS_URL = "https://api.stlouisfed.org/fred/series/observations"
EIA_BASE_URL = "https://api.eia.gov/v2"
YAHOO_CHART_URL = "https://query1.finance.yahoo.com/v8/finance/chart"
TRENDS_URL = "https://trends.google.com/trends/api/widgetdata/multiline"

EIA_DEFAULT_PAGE = 5000
EIA_MAX_PAGES = 100

_FRED_ID_RE = re.compile(r"^[A-Z0-9_]+$")


class AuthMissingError(Exception):
    """A credential required for live access is absent from the environment."""


class RateLimitedError(Exception):
    """Still throttled after exhausting retries."""


class UpstreamError(Exception):
    """The API returned a non-retryable failure (or retries ran out)."""

    def __init__(self, status: int, message: str = "") -> None:
        super().__init__(f"HTTP {status}: {message}" if message else f"HTTP {status}")
        self.status = status


class ParseError(Exception):
    """Response body could not be turned into valid series."""


class EmptyResultError(Exception):
    """The API answered but carried no usable observations."""


class TransportError(Exception):
    """Retryable transport-level failure (connection reset, timeout)."""


class FixtureMissingError(Exception):
    """Replay transport has no recording for this request."""


class QueryFieldError(ValueError):
    """A raw query object is missing or misusing a field."""


class Interval(enum.Enum):
    DAILY = "daily"
    WEEKLY = "weekly"


# --- query payloads -------------------------------------------------------


@dataclass(frozen=True)
class FredQuery:
    series_id: str
    start_date: date
    end_date: date


@dataclass(frozen=True)
class EiaQuery:
    api_route: str
    params: tuple[tuple[str, str], ...]

    def params_dict(self) -> dict[str, str]:
        return dict(self.params)


@dataclass(frozen=True)
class YahooQuery:
    ticker: str
    start_date: date
    end_date: date
    interval: Interval = Interval.DAILY


@dataclass(frozen=True)
class TrendsQuery:
    keyword: str
    start_date: date
    end_date: date
    geo: str | None = None


Payload = FredQuery | EiaQuery | YahooQuery | TrendsQuery

_PAYLOAD_TYPES: dict[Source, type] = {
    Source.FRED: FredQuery,
    Source.EIA: EiaQuery,
    Source.YAHOO: YahooQuery,
    Source.TRENDS: TrendsQuery,
}


@dataclass(frozen=True)
class SourceQuery:
    """One validated request against one source, plus its justification."""

    source: Source
    payload: Payload
    comment: str = ""

    def __post_init__(self) -> None:
        expected = _PAYLOAD_TYPES.get(self.source)
        if expected is None or not isinstance(self.payload, expected):
            raise QueryFieldError(
                f"payload {type(self.payload).__name__} does not match source {self.source.value}"
            )


@dataclass(frozen=True)
class RetryPolicy:
    """Retry and pacing parameters for one fetch."""

    max_attempts: int = 5
    base_delay: float = 1.0
    backoff_multiplier: float = 2.0
    min_request_interval: float = 0.5

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.base_delay <= 0 or self.min_request_interval < 0:
            raise ValueError("delays must be positive")
        if self.backoff_multiplier <= 0:
            raise ValueError("backoff_multiplier must be positive")


# --- validation and dedup -------------------------------------------------


def validate_query(query: SourceQuery) -> list[str]:
    """Structured validation; returns reasons, empty when the query is fine."""
    reasons: list[str] = []
    p = query.payload
    if isinstance(p, FredQuery):
        if not p.series_id:
            reasons.append("empty identifier")
        elif not _FRED_ID_RE.match(p.series_id):
            reasons.append(f"series_id {p.series_id!r} must match [A-Z0-9_]+")
        reasons.extend(_check_range(p.start_date, p.end_date))
    elif isinstance(p, EiaQuery):
        if not p.api_route:
            reasons.append("empty identifier")
        elif p.api_route.startswith("/") or "://" in p.api_route:
            reasons.append("api_route must be a relative path")
        if any(not k for k, _ in p.params):
            reasons.append("params keys must be non-empty")
    elif isinstance(p, YahooQuery):
        if not p.ticker:
            reasons.append("empty identifier")
        reasons.extend(_check_range(p.start_date, p.end_date))
    elif isinstance(p, TrendsQuery):
        if not p.keyword:
            reasons.append("empty identifier")
        reasons.extend(_check_range(p.start_date, p.end_date))
    return reasons


def _check_range(start: date, end: date) -> list[str]:
    if start >= end:
        return ["start after end" if start > end else "start equals end"]
    return []


def canonical_query_key(query: SourceQuery) -> str:
    """Dedup key: source plus sorted payload fields, comment excluded."""
    p = query.payload
    fields: dict[str, object]
    if isinstance(p, FredQuery):
        fields = {
            "series_id": p.series_id,
            "start_date": p.start_date.isoformat(),
            "end_date": p.end_date.isoformat(),
        }
    elif isinstance(p, EiaQuery):
        fields = {"api_route": p.api_route, "params": sorted(p.params)}
    elif isinstance(p, YahooQuery):
        fields = {
            "ticker": p.ticker,
            "start_date": p.start_date.isoformat(),
            "end_date": p.end_date.isoformat(),
            "interval": p.interval.value,
        }
    else:
        fields = {
            "keyword": p.keyword,
            "start_date": p.start_date.isoformat(),
            "end_date": p.end_date.isoformat(),
            "geo": p.geo or "",
        }
    return json.dumps({"source": query.source.value, **fields}, sort_keys=True)


def dedup_queries(queries: Sequence[SourceQuery]) -> list[SourceQuery]:
    """Drop queries whose canonical key repeats an earlier one; first wins."""
    seen: set[str] = set()
    out: list[SourceQuery] = []
    for q in queries:
        key = canonical_query_key(q)
        if key in seen:
            continue
        seen.add(key)
        out.append(q)
    return out


# --- raw object binding and query files -----------------------------------


_DISTINGUISHING_FIELDS = (
    ("series_id", Source.FRED),
    ("api_route", Source.EIA),
    ("ticker", Source.YAHOO),
    ("keyword", Source.TRENDS),
)

_KNOWN_FIELDS: dict[Source, set[str]] = {
    Source.FRED: {"series_id", "start_date", "end_date", "comment", "source"},
    Source.EIA: {"api_route", "params", "comment", "source"},
    Source.YAHOO: {"ticker", "start_date", "end_date", "interval", "comment", "source"},
    Source.TRENDS: {"keyword", "geo", "timeframe", "start_date", "end_date", "comment", "source"},
}


def infer_source(raw: dict) -> Source | None:
    for key, source in _DISTINGUISHING_FIELDS:
        if key in raw:
            return source
    return None


def _require(raw: dict, key: str) -> object:
    if key not in raw:
        raise QueryFieldError(f"missing field {key}")
    return raw[key]


def _as_date(raw: dict, key: str) -> date:
    value = _require(raw, key)
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise QueryFieldError(f"field {key} is not an ISO date: {value!r}") from exc


def payload_from_raw(raw: dict, source: Source) -> Payload:
    """Build a typed payload from a raw JSON object; raises
    :class:`QueryFieldError` for missing or malformed fields."""
    if source is Source.FRED:
        return FredQuery(
            series_id=str(_require(raw, "series_id")),
            start_date=_as_date(raw, "start_date"),
            end_date=_as_date(raw, "end_date"),
        )
    if source is Source.EIA:
        params = _require(raw, "params")
        if not isinstance(params, dict):
            raise QueryFieldError("field params must be an object")
        return EiaQuery(
            api_route=str(_require(raw, "api_route")),
            params=tuple((str(k), str(v)) for k, v in params.items()),
        )
    if source is Source.YAHOO:
        interval_raw = str(raw.get("interval", Interval.DAILY.value))
        try:
            interval = Interval(interval_raw)
        except ValueError as exc:
            raise QueryFieldError(f"unknown interval {interval_raw!r}") from exc
        return YahooQuery(
            ticker=str(_require(raw, "ticker")),
            start_date=_as_date(raw, "start_date"),
            end_date=_as_date(raw, "end_date"),
            interval=interval,
        )
    if source is Source.TRENDS:
        if "timeframe" in raw:
            parts = str(raw["timeframe"]).split()
            if len(parts) != 2:
                raise QueryFieldError(f"timeframe must be 'START END': {raw['timeframe']!r}")
            try:
                start, end = (date.fromisoformat(p) for p in parts)
            except ValueError as exc:
                raise QueryFieldError(f"bad timeframe dates: {raw['timeframe']!r}") from exc
        else:
            start, end = _as_date(raw, "start_date"), _as_date(raw, "end_date")
        geo = raw.get("geo")
        return TrendsQuery(
            keyword=str(_require(raw, "keyword")),
            start_date=start,
            end_date=end,
            geo=str(geo) if geo else None,
        )
    raise QueryFieldError(f"source {source} does not accept queries")


def query_to_raw(query: SourceQuery) -> dict:
    """Serialize back to the JSON field spelling the binder accepts."""
    p = query.payload
    raw: dict[str, object] = {"source": query.source.value}
    if isinstance(p, FredQuery):
        raw.update(
            series_id=p.series_id,
            start_date=p.start_date.isoformat(),
            end_date=p.end_date.isoformat(),
        )
    elif isinstance(p, EiaQuery):
        raw.update(api_route=p.api_route, params=dict(p.params))
    elif isinstance(p, YahooQuery):
        raw.update(
            ticker=p.ticker,
            start_date=p.start_date.isoformat(),
            end_date=p.end_date.isoformat(),
            interval=p.interval.value,
        )
    else:
        raw.update(
            keyword=p.keyword,
            timeframe=f"{p.start_date.isoformat()} {p.end_date.isoformat()}",
        )
        if p.geo:
            raw["geo"] = p.geo
    raw["comment"] = query.comment
    return raw


def save_queries(queries: Sequence[SourceQuery], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([query_to_raw(q) for q in queries], fh, indent=2)
        fh.write("\n")
    return path


def load_queries(path: str | Path, default_source: Source | None = None) -> list[SourceQuery]:
    """Strict loader for a query file; any invalid entry raises."""
    raw_list = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw_list, list):
        raise QueryFieldError(f"{path}: expected a JSON array of query objects")
    out: list[SourceQuery] = []
    for i, raw in enumerate(raw_list):
        if not isinstance(raw, dict):
            raise QueryFieldError(f"{path}[{i}]: expected an object")
        source = Source(raw["source"]) if "source" in raw else (infer_source(raw) or default_source)
        if source is None:
            raise QueryFieldError(f"{path}[{i}]: cannot determine source")
        query = SourceQuery(
            source=source,
            payload=payload_from_raw(raw, source),
            comment=str(raw.get("comment", "")),
        )
        reasons = validate_query(query)
        if reasons:
            raise QueryFieldError(f"{path}[{i}]: {'; '.join(reasons)}")
        out.append(query)
    return out


# --- transport, clock, pacing ---------------------------------------------


@dataclass(frozen=True)
class Request:
    source: str
    method: str
    url: str
    params: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Response:
    status: int
    body: str


def canonical_request_key(request: Request) -> str:
    """Fixture key: sha256 over method, url, and sorted params minus credentials."""
    params = sorted((k, v) for k, v in request.params if k != "api_key")
    blob = json.dumps(
        {"method": request.method, "url": request.url, "params": params}, sort_keys=True
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:32]


class Transport(Protocol):
    mode: str

    def send(self, request: Request) -> Response: ...


class Clock(Protocol):
    def now(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class NullClock:
    """Advances instantly; pacing and backoff become no-ops.

    Used as the default for replay transports, where delays would only
    slow down reading local fixture files.
    """

    def __init__(self) -> None:
        self._time = 0.0

    def now(self) -> float:
        return self._time

    def sleep(self, seconds: float) -> None:
        self._time += seconds


class RequestPacer:
    """Serializes requests per source at one per ``min_request_interval``."""

    def __init__(self, clock: Clock, min_interval: float) -> None:
        self._clock = clock
        self._min_interval = min_interval
        self._lock = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        self._last: dict[str, float] = {}

    def _source_lock(self, source: str) -> threading.Lock:
        with self._lock:
            if source not in self._locks:
                self._locks[source] = threading.Lock()
            return self._locks[source]

    def wait(self, source: str) -> None:
        with self._source_lock(source):
            last = self._last.get(source)
            if last is not None:
                due = last + self._min_interval
                remaining = due - self._clock.now()
                if remaining > 0:
                    self._clock.sleep(remaining)
            self._last[source] = self._clock.now()


class LiveTransport:
    """Real HTTP client; network errors surface as retryable failures."""

    mode = "live"

    def __init__(self, timeout: float = 30.0) -> None:
        import requests

        self._session = requests.Session()
        self._requests = requests
        self._timeout = timeout

    def send(self, request: Request) -> Response:
        try:
            resp = self._session.request(
                request.method,
                request.url,
                params=dict(request.params),
                timeout=self._timeout,
                headers={"User-Agent": "shiftminer/0.1"},
            )
        except self._requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        return Response(status=resp.status_code, body=resp.text)


class ReplayTransport:
    """Serves responses from ``<root>/<source>/<request hash>.json``."""

    mode = "replay"

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def fixture_path(self, request: Request) -> Path:
        return self.root / request.source / f"{canonical_request_key(request)}.json"

    def send(self, request: Request) -> Response:
        path = self.fixture_path(request)
        if not path.exists():
            raise FixtureMissingError(f"no fixture {path} for {request.url}")
        record = json.loads(path.read_text(encoding="utf-8"))
        return Response(status=int(record["status"]), body=record["body"])


def write_fixture(root: str | Path, request: Request, response: Response) -> Path:
    """Record one request/response pair; credentials are redacted."""
    path = Path(root) / request.source / f"{canonical_request_key(request)}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {
        "request": {
            "method": request.method,
            "url": request.url,
            "params": sorted((k, v) for k, v in request.params if k != "api_key"),
        },
        "status": response.status,
        "body": response.body,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


class RecordTransport:
    """Pass-through transport that records every successful exchange."""

    mode = "record"

    def __init__(self, root: str | Path, inner: Transport | None = None) -> None:
        self.root = Path(root)
        self.inner = inner if inner is not None else LiveTransport()

    def send(self, request: Request) -> Response:
        response = self.inner.send(request)
        write_fixture(self.root, request, response)
        return response


def make_transport(mode: str, fixtures_root: str | Path) -> Transport:
    if mode == "live":
        return LiveTransport()
    if mode == "replay":
        return ReplayTransport(fixtures_root)
    if mode == "record":
        return RecordTransport(fixtures_root)
    raise ValueError(f"unknown transport mode {mode!r}")


# --- request construction --------------------------------------------------


def _api_key_for(source: Source, mode: str) -> str | None:
    env_name = {Source.FRED: "FRED_API_KEY", Source.EIA: "EIA_API_KEY"}.get(source)
    if env_name is None:
        return None
    key = os.environ.get(env_name)
    if not key:
        if mode == "replay":
            return None
        raise AuthMissingError(f"{env_name} is required for {mode} access to {source.value}")
    return key


def build_fred_request(payload: FredQuery, api_key: str | None) -> Request:
    params = [
        ("series_id", payload.series_id),
        ("observation_start", payload.start_date.isoformat()),
        ("observation_end", payload.end_date.isoformat()),
        ("file_type", "json"),
    ]
    if api_key:
        params.append(("api_key", api_key))
    return Request(Source.FRED.value, "GET", FRED_OBSERVATIONS_URL, tuple(params))


def build_eia_request(payload: EiaQuery, api_key: str | None, offset: int) -> Request:
    params = dict(payload.params)
    params["offset"] = str(offset)
    params.setdefault("length", str(EIA_DEFAULT_PAGE))
    if api_key:
        params["api_key"] = api_key
    url = f"{EIA_BASE_URL}/{payload.api_route.strip('/')}"
    return Request(Source.EIA.value, "GET", url, tuple(sorted(params.items())))


def _unix(day: date) -> int:
    return int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp())


def build_yahoo_request(payload: YahooQuery) -> Request:
    interval = {"daily": "1d", "weekly": "1wk"}[payload.interval.value]
    params = (
        ("period1", str(_unix(payload.start_date))),
        ("period2", str(_unix(payload.end_date))),
        ("interval", interval),
        ("events", "history"),
    )
    return Request(Source.YAHOO.value, "GET", f"{YAHOO_CHART_URL}/{payload.ticker}", params)


def build_trends_request(payload: TrendsQuery) -> Request:
    req = {
        "keyword": payload.keyword,
        "geo": payload.geo or "",
        "time": f"{payload.start_date.isoformat()} {payload.end_date.isoformat()}",
    }
    params = (("hl", "en-US"), ("tz", "0"), ("req", json.dumps(req, sort_keys=True)))
    return Request(Source.TRENDS.value, "GET", TRENDS_URL, params)


# --- response parsing -------------------------------------------------------


def _parse_period(raw: str) -> date:
    raw = str(raw)
    if re.fullmatch(r"\d{4}", raw):
        return date(int(raw), 1, 1)
    if re.fullmatch(r"\d{4}-\d{2}", raw):
        year, month = raw.split("-")
        return date(int(year), int(month), 1)
    return date.fromisoformat(raw[:10])


def _series_or_parse_error(
    source: Source, native_id: str, comment: str, observations: list[tuple[date, float]]
) -> TimeSeries:
    try:
        timestamps, values = zip(*observations)
        return TimeSeries(
            id=make_series_id(source, native_id, timestamps[0], timestamps[-1]),
            source=source,
            timestamps=timestamps,
            values=values,
            stage=Stage.ORIGINAL,
            comment=comment,
        )
    except ValueError as exc:
        raise ParseError(f"{source.value} response for {native_id!r}: {exc}") from exc


def _finite_float(raw: object) -> float:
    value = float(raw)  # may raise ValueError/TypeError for junk
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError(f"non-finite value {raw!r}")
    return value


def fred_response_to_series(payload: FredQuery, comment: str, body: str) -> list[TimeSeries]:
    """FRED observations JSON; '.' marks a missing observation and is dropped."""
    try:
        doc = json.loads(body)
        observations = []
        for row in doc["observations"]:
            raw_value = row["value"]
            if raw_value in (".", "", None):
                continue
            observations.append((date.fromisoformat(row["date"]), _finite_float(raw_value)))
    except ParseError:
        raise
    except Exception as exc:
        raise ParseError(f"bad FRED body: {exc}") from exc
    if not observations:
        raise EmptyResultError(f"FRED {payload.series_id}: no observations")
    observations.sort(key=lambda pair: pair[0])
    return [_series_or_parse_error(Source.FRED, payload.series_id, comment, observations)]


def eia_rows(body: str) -> tuple[int, list[dict]]:
    """One EIA page: reported total plus the row list."""
    try:
        doc = json.loads(body)
        response = doc["response"]
        rows = response["data"]
        total = int(response.get("total", len(rows)))
        if not isinstance(rows, list):
            raise ValueError("data is not a list")
        return total, rows
    except Exception as exc:
        raise ParseError(f"bad EIA body: {exc}") from exc


def eia_rows_to_series(payload: EiaQuery, comment: str, rows: list[dict]) -> list[TimeSeries]:
    """Group rows by their identity columns; one series per group.

    Rows arrive in whatever sort the query asked for, so observations are
    reordered by period; a duplicated period within one group is an error
    rather than silently collapsed.
    """
    route = payload.api_route.strip("/").split("/")
    stem = route[-2] if route[-1] == "data" and len(route) > 1 else route[-1]
    groups: dict[tuple[tuple[str, str], ...], list[tuple[date, float]]] = {}
    try:
        for row in rows:
            if not isinstance(row, dict) or "period" not in row:
                raise ValueError(f"row without period: {row!r}")
            if row.get("value") is None:
                continue
            when = _parse_period(row["period"])
            value = _finite_float(row["value"])
            key = tuple(
                sorted(
                    (str(k), str(v))
                    for k, v in row.items()
                    if k not in ("period", "value") and not k.endswith("units")
                )
            )
            groups.setdefault(key, []).append((when, value))
    except Exception as exc:
        raise ParseError(f"bad EIA rows: {exc}") from exc

    out = []
    for key in sorted(groups):
        observations = sorted(groups[key], key=lambda pair: pair[0])
        native = "-".join([stem] + [v for _, v in key]) if key else stem
        out.append(_series_or_parse_error(Source.EIA, native, comment, observations))
    return out


def yahoo_response_to_series(payload: YahooQuery, comment: str, body: str) -> list[TimeSeries]:
    """Yahoo chart JSON; the daily (or weekly) close is the value."""
    try:
        doc = json.loads(body)
        result = doc["chart"]["result"][0]
        stamps = result["timestamp"]
        closes = result["indicators"]["quote"][0]["close"]
        if len(stamps) != len(closes):
            raise ValueError("timestamp/close length mismatch")
        observations = []
        for ts, close in zip(stamps, closes):
            if close is None:
                continue
            day = datetime.fromtimestamp(int(ts), tz=timezone.utc).date()
            observations.append((day, _finite_float(close)))
    except ParseError:
        raise
    except Exception as exc:
        raise ParseError(f"bad Yahoo body: {exc}") from exc
    if not observations:
        raise EmptyResultError(f"Yahoo {payload.ticker}: no observations")
    observations.sort(key=lambda pair: pair[0])
    return [_series_or_parse_error(Source.YAHOO, payload.ticker, comment, observations)]


def trends_response_to_series(payload: TrendsQuery, comment: str, body: str) -> list[TimeSeries]:
    """Interest-over-time JSON (with the anti-hijacking prefix stripped)."""
    try:
        text = body
        if text.startswith(")]}'"):
            text = text.split("\n", 1)[1] if "\n" in text else text[5:]
        doc = json.loads(text)
        timeline = doc["default"]["timelineData"]
        observations = []
        for entry in timeline:
            values = entry["value"]
            if not values:
                continue
            day = datetime.fromtimestamp(int(entry["time"]), tz=timezone.utc).date()
            observations.append((day, _finite_float(values[0])))
    except ParseError:
        raise
    except Exception as exc:
        raise ParseError(f"bad Trends body: {exc}") from exc
    if not observations:
        raise EmptyResultError(f"Trends {payload.keyword}: no observations")
    observations.sort(key=lambda pair: pair[0])
    native = payload.keyword.replace(" ", "_") + (f"-{payload.geo}" if payload.geo else "")
    return [_series_or_parse_error(Source.TRENDS, native, comment, observations)]


# --- fetch ------------------------------------------------------------------

_default_pacer_lock = threading.Lock()
_default_pacers: dict[float, RequestPacer] = {}


def _default_pacer(policy: RetryPolicy, clock: Clock) -> RequestPacer:
    with _default_pacer_lock:
        pacer = _default_pacers.get(policy.min_request_interval)
        if pacer is None:
            pacer = RequestPacer(clock, policy.min_request_interval)
            _default_pacers[policy.min_request_interval] = pacer
        return pacer


def _resolve_timing(
    transport: Transport, policy: RetryPolicy, clock: Clock | None, pacer: RequestPacer | None
) -> tuple[Clock, RequestPacer]:
    if clock is None:
        clock = NullClock() if transport.mode == "replay" else SystemClock()
    if pacer is None:
        if transport.mode == "replay":
            pacer = RequestPacer(clock, 0.0)
        else:
            pacer = _default_pacer(policy, clock)
    return clock, pacer


def _execute(
    request: Request,
    transport: Transport,
    policy: RetryPolicy,
    pacer: RequestPacer,
    clock: Clock,
) -> Response:
    last_status: int | None = None
    for attempt in range(1, policy.max_attempts + 1):
        pacer.wait(request.source)
        response: Response | None = None
        try:
            response = transport.send(request)
        except TransportError as exc:
            logger.warning("%s attempt %d/%d failed: %s",
                           request.source, attempt, policy.max_attempts, exc)
        if response is not None:
            logger.info("%s attempt %d/%d -> HTTP %d",
                        request.source, attempt, policy.max_attempts, response.status)
            if response.status == 200:
                return response
            if response.status != 429 and not 500 <= response.status < 600:
                raise UpstreamError(response.status, request.url)
            last_status = response.status
        if attempt < policy.max_attempts:
            clock.sleep(policy.base_delay * policy.backoff_multiplier ** (attempt - 1))
    if last_status == 429:
        raise RateLimitedError(f"{request.url}: still throttled after {policy.max_attempts} attempts")
    raise UpstreamError(last_status or 0, f"{request.url}: retries exhausted")


def fetch(
    query: SourceQuery,
    transport: Transport,
    policy: RetryPolicy | None = None,
    *,
    clock: Clock | None = None,
    pacer: RequestPacer | None = None,
) -> list[TimeSeries]:
    """Execute one query with pacing, retry, and pagination; normalize the
    response(s) into original-stage series."""
    policy = policy or RetryPolicy()
    clock, pacer = _resolve_timing(transport, policy, clock, pacer)
    key = _api_key_for(query.source, transport.mode)
    payload = query.payload

    if isinstance(payload, FredQuery):
        response = _execute(build_fred_request(payload, key), transport, policy, pacer, clock)
        return fred_response_to_series(payload, query.comment, response.body)

    if isinstance(payload, EiaQuery):
        page_length = int(payload.params_dict().get("length", EIA_DEFAULT_PAGE))
        offset = int(payload.params_dict().get("offset", 0))
        rows: list[dict] = []
        total = None
        for _ in range(EIA_MAX_PAGES):
            request = build_eia_request(payload, key, offset)
            response = _execute(request, transport, policy, pacer, clock)
            total, page = eia_rows(response.body)
            rows.extend(page)
            offset += page_length
            if not page or len(rows) >= total:
                break
        series = eia_rows_to_series(payload, query.comment, rows)
        if not series:
            raise EmptyResultError(f"EIA {payload.api_route}: no observations")
        return series

    if isinstance(payload, YahooQuery):
        response = _execute(build_yahoo_request(payload), transport, policy, pacer, clock)
        return yahoo_response_to_series(payload, query.comment, response.body)

    response = _execute(build_trends_request(payload), transport, policy, pacer, clock)
    return trends_response_to_series(payload, query.comment, response.body)


def fetch_all(
    queries: Iterable[SourceQuery],
    transport: Transport,
    policy: RetryPolicy | None = None,
    *,
    clock: Clock | None = None,
    pacer: RequestPacer | None = None,
) -> tuple[list[TimeSeries], list[tuple[SourceQuery, str]]]:
    """Fetch many queries; per-query upstream failures are tallied, not fatal.

    Missing credentials and missing fixtures abort the whole collection:
    both mean the run is misconfigured rather than the upstream flaking.
    """
    policy = policy or RetryPolicy()
    clock, pacer = _resolve_timing(transport, policy, clock, pacer)
    collected: list[TimeSeries] = []
    failures: list[tuple[SourceQuery, str]] = []
    seen_ids: set[str] = set()
    for query in queries:
        try:
            batch = fetch(query, transport, policy, clock=clock, pacer=pacer)
        except (AuthMissingError, FixtureMissingError):
            raise
        except (RateLimitedError, UpstreamError, ParseError, EmptyResultError) as exc:
            logger.warning("query failed (%s): %s", type(exc).__name__, exc)
            failures.append((query, f"{type(exc).__name__}: {exc}"))
            continue
        for series in batch:
            if series.id in seen_ids:
                logger.info("duplicate series %s skipped", series.id)
                continue
            seen_ids.add(series.id)
            collected.append(series)
    return collected, failures
