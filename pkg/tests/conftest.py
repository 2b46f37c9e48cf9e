from __future__ import annotations

from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from shiftminer.series import Source, Stage, TimeSeries
from shiftminer.sources import Request, Response


def make_series(
    values,
    *,
    sid: str = "test",
    source: Source = Source.SYNTHETIC,
    stage: Stage = Stage.ORIGINAL,
    start: date = date(2020, 1, 1),
    provenance=None,
    comment: str = "",
) -> TimeSeries:
    stamps = tuple(start + timedelta(days=i) for i in range(len(values)))
    return TimeSeries(
        id=sid,
        source=source,
        timestamps=stamps,
        values=tuple(float(v) for v in values),
        stage=stage,
        provenance=provenance,
        comment=comment,
    )


def step_values(n: int = 100, shift: float = 5.0, noise: float = 0.0, seed: int = 0):
    rng = np.random.default_rng(seed)
    values = rng.normal(0.0, noise, n) if noise else np.zeros(n)
    values[n // 2 :] += shift
    return values


class VirtualClock:
    """Deterministic clock: ``sleep`` advances time instantly."""

    def __init__(self) -> None:
        self.time = 0.0
        self.sleeps: list[float] = []

    def now(self) -> float:
        return self.time

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        self.time += seconds


class ScriptedTransport:
    """Feeds a fixed response sequence and records request times."""

    mode = "replay"

    def __init__(self, responses, clock: VirtualClock | None = None) -> None:
        self._responses = list(responses)
        self.clock = clock
        self.calls: list[tuple[Request, float]] = []

    def send(self, request: Request) -> Response:
        when = self.clock.now() if self.clock else 0.0
        self.calls.append((request, when))
        if not self._responses:
            raise AssertionError("scripted transport ran out of responses")
        item = self._responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


@pytest.fixture(scope="session")
def demo_fixture_root(tmp_path_factory) -> Path:
    """Fixture tree shared by connector and pipeline tests."""
    from shiftminer import demo

    root = tmp_path_factory.mktemp("fixtures")
    demo.build_connector_fixtures(root)
    return root


@pytest.fixture(scope="session")
def fred_corpus(tmp_path_factory) -> dict:
    """Full 241-series replay corpus plus its query file and config."""
    from shiftminer import demo

    root = tmp_path_factory.mktemp("fred_corpus")
    query_file = demo.build_fred_corpus(root, count=241, seed=20240704)
    return {"fixtures": root, "query_file": query_file}
