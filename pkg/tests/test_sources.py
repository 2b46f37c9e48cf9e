from __future__ import annotations

import json
import logging
from datetime import date

import numpy as np
import pytest
from shiftminer import demo
from shiftminer.series import Source, Stage
from shiftminer.sources import (
    AuthMissingError,
    EiaQuery,
    EmptyResultError,
    FixtureMissingError,
    FredQuery,
    ParseError,
    RateLimitedError,
    ReplayTransport,
    RequestPacer,
    Response,
    RetryPolicy,
    SourceQuery,
    TrendsQuery,
    UpstreamError,
    YahooQuery,
    build_fred_request,
    canonical_request_key,
    dedup_queries,
    eia_rows,
    eia_rows_to_series,
    fetch,
    fetch_all,
    fred_response_to_series,
    load_queries,
    save_queries,
    trends_response_to_series,
    validate_query,
    write_fixture,
    yahoo_response_to_series,
)

from conftest import ScriptedTransport, VirtualClock

UNRATE = SourceQuery(
    source=Source.FRED,
    payload=FredQuery("UNRATE", date(2007, 1, 1), date(2013, 1, 1)),
    comment="Covers the Great Recession period, showcasing shifts in employment levels.",
)


def fred_ok_body(n=24):
    dates = demo.month_starts(date(2007, 1, 1), n)
    return demo.fred_body(dates, [4.5 + 0.1 * i for i in range(n)])


class TestValidateQuery:
    def test_figure_style_query_ok(self):
        assert validate_query(UNRATE) == []

    def test_start_after_end(self):
        q = SourceQuery(Source.FRED, FredQuery("UNRATE", date(2013, 1, 1), date(2007, 1, 1)))
        assert any("start after end" in r for r in validate_query(q))

    def test_empty_identifier(self):
        q = SourceQuery(Source.FRED, FredQuery("", date(2007, 1, 1), date(2013, 1, 1)))
        assert any("empty identifier" in r for r in validate_query(q))

    def test_fred_id_charset(self):
        q = SourceQuery(Source.FRED, FredQuery("un rate", date(2007, 1, 1), date(2013, 1, 1)))
        assert validate_query(q)

    def test_eia_route_relative(self):
        q = SourceQuery(Source.EIA, EiaQuery("/absolute/path", (("a", "1"),)))
        assert any("relative" in r for r in validate_query(q))

    def test_eia_empty_param_key(self):
        q = SourceQuery(Source.EIA, EiaQuery("route/data", (("", "1"),)))
        assert validate_query(q)


class TestDedup:
    def test_comment_excluded_from_key(self):
        a = SourceQuery(Source.FRED, FredQuery("UNRATE", date(2007, 1, 1), date(2013, 1, 1)), "one")
        b = SourceQuery(Source.FRED, FredQuery("UNRATE", date(2007, 1, 1), date(2013, 1, 1)), "two")
        out = dedup_queries([a, b])
        assert out == [a]
        assert out[0].comment == "one"

    def test_different_ranges_kept(self):
        a = SourceQuery(Source.FRED, FredQuery("UNRATE", date(2007, 1, 1), date(2013, 1, 1)))
        b = SourceQuery(Source.FRED, FredQuery("UNRATE", date(2014, 1, 1), date(2015, 1, 1)))
        assert dedup_queries([a, b]) == [a, b]

    def test_empty(self):
        assert dedup_queries([]) == []

    def test_idempotent_and_stable(self):
        rng = np.random.default_rng(0)
        pool = [
            SourceQuery(
                Source.FRED,
                FredQuery(f"S{rng.integers(0, 5)}", date(2000, 1, 1), date(2001, 1, 1)),
            )
            for _ in range(30)
        ]
        once = dedup_queries(pool)
        assert dedup_queries(once) == once


class TestRetryAndPacing:
    def test_two_429_then_success(self, caplog):
        clock = VirtualClock()
        transport = ScriptedTransport(
            [Response(429, ""), Response(429, ""), Response(200, fred_ok_body())], clock
        )
        policy = RetryPolicy(max_attempts=5, base_delay=1.0, backoff_multiplier=2.0,
                             min_request_interval=0.5)
        pacer = RequestPacer(clock, policy.min_request_interval)
        with caplog.at_level(logging.INFO, logger="shiftminer.sources"):
            series = fetch(UNRATE, transport, policy, clock=clock, pacer=pacer)
        assert len(series) == 1
        assert len(transport.calls) == 3
        assert clock.sleeps == [1.0, 2.0]
        attempts_logged = [r for r in caplog.records if "attempt" in r.message]
        assert len(attempts_logged) == 3

    def test_backoff_sequence_to_exhaustion(self):
        clock = VirtualClock()
        transport = ScriptedTransport([Response(429, "")] * 4, clock)
        policy = RetryPolicy(max_attempts=4, min_request_interval=0.0)
        pacer = RequestPacer(clock, 0.0)
        with pytest.raises(RateLimitedError):
            fetch(UNRATE, transport, policy, clock=clock, pacer=pacer)
        assert clock.sleeps == [1.0, 2.0, 4.0]

    def test_server_errors_retry_then_upstream_error(self):
        clock = VirtualClock()
        transport = ScriptedTransport([Response(500, "boom")] * 3, clock)
        policy = RetryPolicy(max_attempts=3, min_request_interval=0.0)
        with pytest.raises(UpstreamError) as err:
            fetch(UNRATE, transport, policy, clock=clock, pacer=RequestPacer(clock, 0.0))
        assert err.value.status == 500

    def test_client_error_not_retried(self):
        clock = VirtualClock()
        transport = ScriptedTransport([Response(404, "")], clock)
        with pytest.raises(UpstreamError):
            fetch(UNRATE, transport, RetryPolicy(), clock=clock, pacer=RequestPacer(clock, 0.0))
        assert len(transport.calls) == 1

    def test_pacing_interval_respected_across_fetches(self):
        clock = VirtualClock()
        bodies = [Response(200, fred_ok_body())] * 5
        transport = ScriptedTransport(bodies, clock)
        policy = RetryPolicy(min_request_interval=0.75)
        pacer = RequestPacer(clock, policy.min_request_interval)
        for _ in range(5):
            fetch(UNRATE, transport, policy, clock=clock, pacer=pacer)
        times = [when for _, when in transport.calls]
        gaps = np.diff(times)
        assert np.all(gaps >= 0.75 - 1e-9)

    def test_pacing_per_source_independent(self):
        clock = VirtualClock()
        pacer = RequestPacer(clock, 10.0)
        pacer.wait("fred")
        t0 = clock.now()
        pacer.wait("eia")  # different source, no wait
        assert clock.now() == t0
        pacer.wait("fred")
        assert clock.now() >= t0 + 10.0

    def test_unparseable_body(self):
        clock = VirtualClock()
        transport = ScriptedTransport([Response(200, "this is not json")], clock)
        with pytest.raises(ParseError):
            fetch(UNRATE, transport, RetryPolicy(), clock=clock, pacer=RequestPacer(clock, 0.0))

    def test_auth_missing_in_live_mode(self, monkeypatch):
        monkeypatch.delenv("FRED_API_KEY", raising=False)
        clock = VirtualClock()
        transport = ScriptedTransport([Response(200, fred_ok_body())], clock)
        transport.mode = "live"
        with pytest.raises(AuthMissingError):
            fetch(UNRATE, transport, RetryPolicy(), clock=clock, pacer=RequestPacer(clock, 0.0))


class TestConnectors:
    def test_fred_unrate_fixture(self, demo_fixture_root):
        transport = ReplayTransport(demo_fixture_root)
        clock = VirtualClock()
        series = fetch(demo.UNRATE_QUERY, transport, RetryPolicy(min_request_interval=0.0),
                       clock=clock, pacer=RequestPacer(clock, 0.0))
        assert len(series) == 1
        s = series[0]
        assert s.timestamps[0] == date(2007, 1, 1)
        assert s.timestamps[1] == date(2007, 2, 1)  # monthly grid
        assert len(s) == 73
        assert s.stage is Stage.ORIGINAL
        assert s.source is Source.FRED
        assert "Great Recession" in s.comment
        assert s.id.startswith("fred-UNRATE-2007-01-01")

    def test_fred_missing_values_dropped(self):
        dates = demo.month_starts(date(2010, 1, 1), 12)
        body = demo.fred_body(dates, [1.0] * 12, missing_every=4)
        payload = FredQuery("X", date(2010, 1, 1), date(2011, 1, 1))
        series = fred_response_to_series(payload, "", body)
        assert len(series[0]) == 9

    def test_eia_pagination_and_grouping(self, demo_fixture_root):
        queries = load_queries(demo_fixture_root / "connector_queries.json")
        eia_query = next(q for q in queries if q.source is Source.EIA)
        transport = ReplayTransport(demo_fixture_root)
        clock = VirtualClock()
        series = fetch(eia_query, transport, RetryPolicy(min_request_interval=0.0),
                       clock=clock, pacer=RequestPacer(clock, 0.0))
        assert len(series) == 1
        s = series[0]
        assert len(s) == 180  # both pages, resorted ascending
        assert s.timestamps[0] == date(2017, 9, 1)
        assert "PJM" in s.id
        # two scripted pages were fetched
        assert len(list((demo_fixture_root / "eia").glob("*.json"))) == 2

    def test_eia_multiple_groups(self):
        rows = []
        for i in range(4):
            for kind in ("D", "NG"):
                rows.append({"period": f"2020-01-{i + 1:02d}", "respondent": "PJM",
                             "type": kind, "value": float(i)})
        payload = EiaQuery("electricity/rto/daily-region-data/data", (("frequency", "daily"),))
        series = eia_rows_to_series(payload, "", rows)
        assert len(series) == 2
        assert all(len(s) == 4 for s in series)

    def test_eia_duplicate_period_rejected(self):
        rows = [
            {"period": "2020-01-01", "respondent": "PJM", "value": 1.0},
            {"period": "2020-01-01", "respondent": "PJM", "value": 2.0},
            {"period": "2020-01-02", "respondent": "PJM", "value": 2.0},
        ]
        payload = EiaQuery("r/data", ())
        with pytest.raises(ParseError):
            eia_rows_to_series(payload, "", rows)

    def test_yahoo_fixture(self, demo_fixture_root):
        queries = load_queries(demo_fixture_root / "connector_queries.json")
        yq = next(q for q in queries if q.source is Source.YAHOO)
        transport = ReplayTransport(demo_fixture_root)
        clock = VirtualClock()
        series = fetch(yq, transport, RetryPolicy(min_request_interval=0.0),
                       clock=clock, pacer=RequestPacer(clock, 0.0))
        assert len(series) == 1
        assert series[0].source is Source.YAHOO
        # one null close was dropped
        body = json.loads(next((demo_fixture_root / "yahoo").glob("*.json")).read_text())
        n_raw = len(json.loads(body["body"])["chart"]["result"][0]["timestamp"])
        assert len(series[0]) == n_raw - 1

    def test_trends_fixture(self, demo_fixture_root):
        queries = load_queries(demo_fixture_root / "connector_queries.json")
        tq = next(q for q in queries if q.source is Source.TRENDS)
        transport = ReplayTransport(demo_fixture_root)
        clock = VirtualClock()
        series = fetch(tq, transport, RetryPolicy(min_request_interval=0.0),
                       clock=clock, pacer=RequestPacer(clock, 0.0))
        assert len(series) == 1
        assert len(series[0]) == 120
        assert series[0].source is Source.TRENDS

    def test_missing_fixture_raises(self, tmp_path):
        transport = ReplayTransport(tmp_path)
        clock = VirtualClock()
        with pytest.raises(FixtureMissingError):
            fetch(UNRATE, transport, RetryPolicy(), clock=clock, pacer=RequestPacer(clock, 0.0))

    def test_record_then_replay_roundtrip(self, tmp_path):
        request = build_fred_request(UNRATE.payload, api_key="secret")
        response = Response(200, fred_ok_body())
        write_fixture(tmp_path, request, response)
        stored = json.loads(next((tmp_path / "fred").glob("*.json")).read_text())
        assert "secret" not in json.dumps(stored)  # credentials redacted
        # replay finds it regardless of the key used to build the request
        replay = ReplayTransport(tmp_path)
        again = replay.send(build_fred_request(UNRATE.payload, api_key=None))
        assert again == response

    def test_empty_observations(self):
        payload = FredQuery("X", date(2010, 1, 1), date(2011, 1, 1))
        body = json.dumps({"observations": []})
        with pytest.raises(EmptyResultError):
            fred_response_to_series(payload, "", body)

    def test_fetch_all_tallies_failures(self, demo_fixture_root):
        bad = SourceQuery(Source.FRED, FredQuery("NOPE", date(2010, 1, 1), date(2011, 1, 1)))
        transport = ReplayTransport(demo_fixture_root)
        clock = VirtualClock()
        with pytest.raises(FixtureMissingError):
            fetch_all([demo.UNRATE_QUERY, bad], transport, RetryPolicy(min_request_interval=0.0),
                      clock=clock, pacer=RequestPacer(clock, 0.0))
        # upstream failures, by contrast, are tallied
        scripted = ScriptedTransport(
            [Response(200, fred_ok_body()), Response(404, "")], VirtualClock()
        )
        scripted.clock = clock = VirtualClock()
        collected, failures = fetch_all(
            [demo.UNRATE_QUERY, bad], scripted, RetryPolicy(min_request_interval=0.0),
            clock=clock, pacer=RequestPacer(clock, 0.0),
        )
        assert len(collected) == 1 and len(failures) == 1


class TestQueryFile:
    def test_roundtrip(self, tmp_path):
        queries = [
            UNRATE,
            SourceQuery(Source.YAHOO, YahooQuery("SPY", date(2020, 1, 1), date(2020, 6, 1))),
            SourceQuery(Source.TRENDS, TrendsQuery("flu", date(2019, 1, 1), date(2020, 1, 1), geo="US")),
            SourceQuery(Source.EIA, EiaQuery("electricity/rto/daily-region-data/data",
                                             (("frequency", "daily"), ("length", "5000")))),
        ]
        path = save_queries(queries, tmp_path / "q.json")
        assert load_queries(path) == queries
        raw = json.loads(path.read_text())
        assert set(raw[0]) == {"source", "series_id", "start_date", "end_date", "comment"}

    def test_invalid_entry_raises(self, tmp_path):
        path = tmp_path / "q.json"
        path.write_text(json.dumps([{"series_id": "X", "start_date": "2020-01-01"}]))
        with pytest.raises(Exception):
            load_queries(path, default_source=Source.FRED)


# --- parser fuzz: valid series or a parse-family error, never junk ------------


def _mutate(body: str, rng: np.random.Generator) -> str:
    choice = rng.integers(0, 8)
    if choice == 0:
        return body[: rng.integers(0, len(body))]
    if choice == 1:
        return body.replace('"value"', '"wert"', 1)
    if choice == 2:
        return body.replace('"date"', '"when"')
    if choice == 3:
        return body.replace(":", ";", 1)
    if choice == 4:
        i = int(rng.integers(0, max(1, len(body) - 1)))
        return body[:i] + chr(int(rng.integers(32, 127))) + body[i + 1 :]
    if choice == 5:
        return body.replace('"4', '"NaN#', 2)
    if choice == 6:
        return "null"
    return body  # unchanged: must parse


@pytest.mark.parametrize("source", ["fred", "eia", "yahoo", "trends"])
def test_parser_fuzz_never_emits_invalid_series(source, demo_fixture_root):
    fixture_dir = demo_fixture_root / source
    bodies = [json.loads(p.read_text())["body"] for p in sorted(fixture_dir.glob("*.json"))]
    queries = load_queries(demo_fixture_root / "connector_queries.json")
    query = next(q for q in queries if q.source.value == source)
    rng = np.random.default_rng(hash(source) % 2**32)

    checked = 0
    for _ in range(150):
        body = _mutate(bodies[0], rng)
        try:
            if source == "fred":
                series = fred_response_to_series(query.payload, "", body)
            elif source == "eia":
                _, rows = eia_rows(body)
                series = eia_rows_to_series(query.payload, "", rows)
            elif source == "yahoo":
                series = yahoo_response_to_series(query.payload, "", body)
            else:
                series = trends_response_to_series(query.payload, "", body)
        except (ParseError, EmptyResultError):
            checked += 1
            continue
        for s in series:
            assert len(s.timestamps) == len(s.values) >= 2
            assert all(b > a for a, b in zip(s.timestamps, s.timestamps[1:]))
            assert all(v == v and abs(v) != float("inf") for v in s.values)
        checked += 1
    assert checked == 150


def test_request_key_excludes_credentials():
    with_key = build_fred_request(UNRATE.payload, api_key="abc")
    without = build_fred_request(UNRATE.payload, api_key=None)
    assert canonical_request_key(with_key) == canonical_request_key(without)


class TestConcurrency:
    def test_pacer_serializes_within_source_across_threads(self):
        from concurrent.futures import ThreadPoolExecutor

        clock = VirtualClock()
        pacer = RequestPacer(clock, 1.0)
        stamps: list[float] = []

        def one_request(_):
            pacer.wait("fred")
            stamps.append(clock.now())

        with ThreadPoolExecutor(max_workers=4) as pool:
            list(pool.map(one_request, range(12)))
        stamps.sort()
        assert all(b - a >= 1.0 - 1e-9 for a, b in zip(stamps, stamps[1:]))

    def test_custom_backoff_parameters(self):
        clock = VirtualClock()
        transport = ScriptedTransport([Response(429, "")] * 4, clock)
        policy = RetryPolicy(max_attempts=4, base_delay=0.5, backoff_multiplier=3.0,
                             min_request_interval=0.0)
        with pytest.raises(RateLimitedError):
            fetch(UNRATE, transport, policy, clock=clock, pacer=RequestPacer(clock, 0.0))
        assert clock.sleeps == [0.5, 1.5, 4.5]
