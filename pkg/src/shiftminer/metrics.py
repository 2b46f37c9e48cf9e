"""Forecast evaluation helpers: MSE, its variance, and interval calibration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class LengthMismatchError(ValueError):
    """Prediction and actual sequences differ in length or alignment."""


class TooFewSamplesError(ValueError):
    """Need at least two samples."""


class LevelMismatchError(ValueError):
    """Forecasts do not share one quantile level set."""


@dataclass(frozen=True)
class QuantileForecast:
    """Per-step quantile values at shared levels plus a point forecast.

    ``values[t][i]`` is the level ``levels[i]`` quantile at step ``t``;
    quantiles must be non-decreasing across levels at every step.
    """

    levels: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]
    point: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(float(q) for q in self.levels))
        object.__setattr__(
            self, "values", tuple(tuple(float(v) for v in row) for row in self.values)
        )
        object.__setattr__(self, "point", tuple(float(v) for v in self.point))
        if not self.levels or any(not 0 < q < 1 for q in self.levels):
            raise ValueError("levels must be non-empty and inside (0, 1)")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if len(self.values) != len(self.point):
            raise LengthMismatchError("per-step values and point forecast lengths differ")
        for row in self.values:
            if len(row) != len(self.levels):
                raise LevelMismatchError("each step needs one value per level")
            if any(b < a for a, b in zip(row, row[1:])):
                raise ValueError("quantiles must be non-decreasing across levels")

    @property
    def horizon(self) -> int:
        return len(self.point)


def mse(pred: Sequence[float], actual: Sequence[float]) -> float:
    """Mean squared difference between prediction and truth."""
    if len(pred) != len(actual):
        raise LengthMismatchError(f"lengths differ: {len(pred)} vs {len(actual)}")
    if len(pred) == 0:
        raise LengthMismatchError("need at least one sample")
    p = np.asarray(pred, dtype=float)
    a = np.asarray(actual, dtype=float)
    return float(np.mean((p - a) ** 2))


def mse_variance(per_sample_mses: Sequence[float]) -> float:
    """Population variance of per-sample MSE values."""
    if len(per_sample_mses) < 2:
        raise TooFewSamplesError("variance needs >= 2 samples")
    return float(np.var(np.asarray(per_sample_mses, dtype=float)))


def mae_coverage(
    forecasts: Sequence[QuantileForecast], actuals: Sequence[Sequence[float]]
) -> float:
    """Mean absolute gap between observed coverage and the target levels.

    Observed coverage at level q pools every (sample, step) pair: the
    fraction with ``actual <= predicted q-quantile``. Zero means perfectly
    calibrated intervals.
    """
    if not forecasts:
        raise LevelMismatchError("need at least one forecast")
    levels = forecasts[0].levels
    for fc in forecasts:
        if fc.levels != levels:
            raise LevelMismatchError("forecasts must share one level set")
    if len(actuals) != len(forecasts):
        raise LengthMismatchError("one actual sequence per forecast required")
    for fc, act in zip(forecasts, actuals):
        if len(act) != fc.horizon:
            raise LengthMismatchError("actuals must align with the forecast horizon")

    quantiles = np.concatenate([np.asarray(fc.values, dtype=float) for fc in forecasts])
    truth = np.concatenate([np.asarray(act, dtype=float) for act in actuals])
    covered = (truth[:, None] <= quantiles).mean(axis=0)
    return float(np.mean(np.abs(covered - np.asarray(levels))))
