"""Core domain types shared by every pipeline stage.

A :class:`TimeSeries` is one univariate sampled series with calendar
timestamps at date resolution, a source tag, a pipeline stage tag, and
(for augmented samples) a provenance record pointing back at its parent.
All types are immutable after construction and validate their invariants
eagerly, so a constructed value is always safe to share across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from datetime import date

import numpy as np


class SeriesError(ValueError):
    """A series value violates a structural invariant."""


class TooShortError(SeriesError):
    """Fewer than two valid samples."""


class NonMonotonicTimestampsError(SeriesError):
    """Timestamps are not strictly increasing."""


class NonFiniteValueError(SeriesError):
    """A value is NaN or infinite."""


class Source(enum.Enum):
    FRED = "fred"
    EIA = "eia"
    YAHOO = "yahoo"
    TRENDS = "trends"
    SYNTHETIC = "synthetic"


class Stage(enum.Enum):
    ORIGINAL = "original"
    PRUNED = "pruned"
    AUGMENTED = "augmented"


class AugmentMethod(enum.Enum):
    TIME_WARP = "time_warp"
    WINDOW_WARP = "window_warp"
    WINDOW_SLICE = "window_slice"


MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class Provenance:
    """How an augmented series was derived from its parent."""

    parent_id: str
    method: AugmentMethod
    seed: int
    shift_verified: bool

    def __post_init__(self) -> None:
        if not self.parent_id:
            raise SeriesError("provenance parent_id must be non-empty")
        if not 0 <= self.seed <= MAX_SEED:
            raise SeriesError("provenance seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class TimeSeries:
    """One sampled series plus its pipeline metadata.

    Invariants (checked at construction):

    * ``len(timestamps) == len(values) >= 2``
    * timestamps strictly increasing
    * every value finite
    * ``stage == AUGMENTED`` exactly when ``provenance`` is present
    """

    id: str
    source: Source
    timestamps: tuple[date, ...]
    values: tuple[float, ...]
    stage: Stage
    provenance: Provenance | None = None
    comment: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.id:
            raise SeriesError("series id must be non-empty")
        if len(self.timestamps) != len(self.values):
            raise SeriesError(
                f"timestamps ({len(self.timestamps)}) and values "
                f"({len(self.values)}) must have equal length"
            )
        if len(self.values) < 2:
            raise TooShortError(f"series {self.id!r} has {len(self.values)} samples, need >= 2")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise NonMonotonicTimestampsError(
                f"series {self.id!r} timestamps must be strictly increasing"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise NonFiniteValueError(f"series {self.id!r} contains non-finite values")
        if (self.stage is Stage.AUGMENTED) != (self.provenance is not None):
            raise SeriesError(
                f"series {self.id!r}: provenance must be present exactly for augmented series"
            )

    def __len__(self) -> int:
        return len(self.values)

    def values_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def with_stage(self, stage: Stage) -> "TimeSeries":
        return replace(self, stage=stage)


def make_series_id(source: Source, native_id: str, start: date, end: date) -> str:
    """Stable storage key: ``<source>-<native id>-<start>-<end>``."""
    safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in native_id)
    return f"{source.value}-{safe}-{start.isoformat()}-{end.isoformat()}"


def min_max_normalize(series: TimeSeries) -> TimeSeries:
    """Affinely map values onto [0, 1]; a constant series maps to all 0.5.

    The 0.5 convention keeps degenerate inputs inside the output range
    without dividing by zero.
    """
    lo = min(series.values)
    hi = max(series.values)
    if hi == lo:
        scaled = tuple(0.5 for _ in series.values)
    else:
        span = hi - lo
        scaled = tuple((v - lo) / span for v in series.values)
    return replace(series, values=scaled)
