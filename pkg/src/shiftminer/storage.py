"""Series and dataset persistence.

Layout on disk::

    data/<dataset>/<stage>/<id>.csv        one row per sample
    data/<dataset>/<stage>/<id>.meta.json  sidecar metadata
    data/<dataset>/manifest.json           stage counts and length stats

Series files are UTF-8 CSV with header ``timestamp,value``, ISO dates,
values at 12 significant digits, and ``\\n`` line endings, so a saved
tree is byte-stable across runs with the same inputs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable

from .series import (
    AugmentMethod,
    NonMonotonicTimestampsError,
    Provenance,
    SeriesError,
    Source,
    Stage,
    TimeSeries,
    TooShortError,
)

logger = logging.getLogger(__name__)

CSV_HEADER = "timestamp,value"


class MalformedFileError(ValueError):
    """A series file has a bad header or an unparseable row."""


class IoFailureError(Exception):
    """Filesystem operation failed."""


class ManifestError(ValueError):
    """Manifest fields violate their invariants."""


@dataclass(frozen=True)
class DatasetManifest:
    """Per-dataset bookkeeping: stage counts plus length statistics."""

    name: str
    domain: str
    description: str
    length_min: int
    length_max: int
    count_original: int
    count_pruned: int
    count_augmented: int
    seed: int
    created_at: str
    notes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.count_pruned > self.count_original:
            raise ManifestError("count_pruned must not exceed count_original")
        if min(self.count_original, self.count_pruned, self.count_augmented) < 0:
            raise ManifestError("counts must be non-negative")
        if self.length_min > self.length_max:
            raise ManifestError("length_min must not exceed length_max")
        if self.length_min < 0:
            raise ManifestError("lengths must be non-negative")
        if self.count_original > 0 and self.length_min == 0:
            raise ManifestError("non-empty dataset must report positive lengths")


def load_series(path: str | Path) -> TimeSeries:
    """Read one series file (plus sidecar metadata when present).

    Rows whose value is NaN or infinite are dropped; the number dropped is
    logged as a warning. Raises :class:`MalformedFileError` for a bad
    header or row, :class:`TooShortError` for fewer than two valid rows,
    and :class:`NonMonotonicTimestampsError` for unordered timestamps.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}") from exc

    lines = [ln.strip() for ln in text.split("\n")]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise MalformedFileError(f"{path}: expected header {CSV_HEADER!r}")

    timestamps: list[date] = []
    values: list[float] = []
    dropped = 0
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise MalformedFileError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        try:
            ts = date.fromisoformat(parts[0])
            value = float(parts[1])
        except ValueError as exc:
            raise MalformedFileError(f"{path}:{lineno}: {exc}") from exc
        if value != value or value in (float("inf"), float("-inf")):
            dropped += 1
            continue
        timestamps.append(ts)
        values.append(value)

    if dropped:
        logger.warning("%s: dropped %d non-finite row(s)", path, dropped)
    if len(values) < 2:
        raise TooShortError(f"{path}: {len(values)} valid rows, need >= 2")
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        raise NonMonotonicTimestampsError(f"{path}: timestamps must be strictly increasing")

    meta = _read_sidecar(path)
    return TimeSeries(
        id=meta.get("id", path.stem),
        source=Source(meta.get("source", Source.SYNTHETIC.value)),
        timestamps=tuple(timestamps),
        values=tuple(values),
        stage=Stage(meta.get("stage", Stage.ORIGINAL.value)),
        provenance=_provenance_from_meta(meta.get("provenance")),
        comment=meta.get("comment", ""),
    )


def save_series(series: TimeSeries, directory: str | Path) -> Path:
    """Write ``<id>.csv`` plus ``<id>.meta.json`` under ``directory``.

    Round trip holds: loading the written file reproduces timestamps
    exactly and values to 12 significant digits.
    """
    directory = Path(directory)
    csv_path = directory / f"{series.id}.csv"
    rows = [CSV_HEADER]
    rows.extend(
        f"{ts.isoformat()},{value:.12g}" for ts, value in zip(series.timestamps, series.values)
    )
    meta = {
        "id": series.id,
        "source": series.source.value,
        "stage": series.stage.value,
        "comment": series.comment,
        "provenance": _provenance_to_meta(series.provenance),
    }
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(rows) + "\n")
        with open(directory / f"{series.id}.meta.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write series under {directory}") from exc
    return csv_path


def _read_sidecar(csv_path: Path) -> dict:
    meta_path = csv_path.with_suffix("").with_suffix(".meta.json")
    if not meta_path.exists():
        return {}
    try:
        return json.loads(meta_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedFileError(f"{meta_path}: bad sidecar") from exc


def _provenance_to_meta(prov: Provenance | None) -> dict | None:
    if prov is None:
        return None
    out = asdict(prov)
    out["method"] = prov.method.value
    return out


def _provenance_from_meta(raw: dict | None) -> Provenance | None:
    if raw is None:
        return None
    try:
        return Provenance(
            parent_id=raw["parent_id"],
            method=AugmentMethod(raw["method"]),
            seed=int(raw["seed"]),
            shift_verified=bool(raw["shift_verified"]),
        )
    except (KeyError, ValueError, SeriesError) as exc:
        raise MalformedFileError(f"bad provenance record: {raw!r}") from exc


# --- dataset layout -------------------------------------------------------


def dataset_dir(root: str | Path, name: str) -> Path:
    return Path(root) / name


def stage_dir(root: str | Path, name: str, stage: Stage) -> Path:
    return dataset_dir(root, name) / stage.value


def save_stage(root: str | Path, name: str, series_list: Iterable[TimeSeries]) -> list[Path]:
    paths = []
    for series in series_list:
        paths.append(save_series(series, stage_dir(root, name, series.stage)))
    return paths


def load_stage(root: str | Path, name: str, stage: Stage) -> list[TimeSeries]:
    """Load every series in a stage directory, sorted by id."""
    directory = stage_dir(root, name, stage)
    if not directory.is_dir():
        return []
    return [load_series(p) for p in sorted(directory.glob("*.csv"))]


def manifest_path(root: str | Path, name: str) -> Path:
    return dataset_dir(root, name) / "manifest.json"


def write_manifest(root: str | Path, manifest: DatasetManifest) -> Path:
    path = manifest_path(root, manifest.name)
    payload = asdict(manifest)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write manifest {path}") from exc
    return path


def load_manifest(root: str | Path, name: str) -> DatasetManifest:
    path = manifest_path(root, name)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailureError(f"cannot read manifest {path}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: bad manifest") from exc
    try:
        return DatasetManifest(**raw)
    except (TypeError, ManifestError) as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()
