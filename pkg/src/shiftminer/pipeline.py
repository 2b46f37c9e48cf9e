"""Pipeline orchestration: queries -> collect -> prune -> augment -> report.

Every stage persists its series under ``<output_dir>/<dataset>/<stage>/``
and the run finishes by writing a manifest with stage counts and length
statistics. A replay-mode run with a fixed seed is fully deterministic,
including the bytes on disk, as long as the caller supplies the
``created_at`` instant (the CLI honors ``SOURCE_DATE_EPOCH`` for this).
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass, field, replace as dc_replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import querygen, sources, storage
from .augment import AugmentConfig, augment_set
from .changepoint import DetectorConfig, prune
from .metrics import mae_coverage, mse, mse_variance  # re-exported utility metrics
from .series import Source, Stage, TimeSeries
from .storage import DatasetManifest

__all__ = [
    "PipelineConfig",
    "ConfigError",
    "StageError",
    "PruningEmptyError",
    "run",
    "split_train_test",
    "split_dataset",
    "report",
    "mse",
    "mse_variance",
    "mae_coverage",
]

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Configuration file or fields are unusable."""


class PruningEmptyError(Exception):
    """Pruning left no series with a detected shift."""


class EmptyInputError(ValueError):
    """An operation that needs data received none."""


class StageError(Exception):
    """A pipeline stage failed; partial outputs were removed."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    dataset_name: str
    source: Source
    query_file: Path | None = None
    transport_mode: str = "replay"
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    split_ratio: float = 0.8
    master_seed: int = 0
    output_dir: Path = Path("data")
    fixtures_dir: Path = Path("fixtures")
    domain: str = ""
    description: str = ""
    query_count: int = 50

    def __post_init__(self) -> None:
        if not self.dataset_name:
            raise ConfigError("dataset_name must be non-empty")
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must be in (0, 1)")
        if self.transport_mode not in ("live", "replay", "record"):
            raise ConfigError(f"unknown transport_mode {self.transport_mode!r}")


def load_config(path: str | Path) -> PipelineConfig:
    """Read a config file whose keys mirror :class:`PipelineConfig`."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    try:
        kwargs: dict = dict(raw)
        kwargs["source"] = Source(raw["source"])
        if raw.get("query_file"):
            kwargs["query_file"] = Path(raw["query_file"])
        if "changepoint" in raw:  # accepted alias for the detector block
            kwargs["detector"] = DetectorConfig(**kwargs.pop("changepoint"))
        if "detector" in raw:
            kwargs["detector"] = DetectorConfig(**raw["detector"])
        if "augment" in raw:
            kwargs["augment"] = AugmentConfig(**raw["augment"])
        for key in ("output_dir", "fixtures_dir"):
            if key in raw:
                kwargs[key] = Path(raw[key])
        return PipelineConfig(**kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"config {path}: {exc}") from exc


def _resolved_augment(config: PipelineConfig) -> AugmentConfig:
    if config.augment.master_seed is None:
        return dc_replace(config.augment, master_seed=config.master_seed)
    return config.augment


def _default_backend(config: PipelineConfig) -> querygen.CompletionBackend:
    llm_root = config.fixtures_dir / "llm"
    if config.transport_mode == "replay":
        return querygen.ReplayBackend(llm_root)
    live = querygen.HttpBackend()
    if config.transport_mode == "record":
        return querygen.RecordBackend(llm_root, live)
    return live


class _Runner:
    """Executes stages in order, wiping a stage's partial output on failure."""

    def __init__(self, config: PipelineConfig) -> None:
        self.config = config
        self.root = config.output_dir
        self.name = config.dataset_name
        self.notes: dict[str, str] = {}

    def _stage(self, label: str, stage: Stage | None, fn):
        try:
            return fn()
        except Exception as exc:
            if stage is not None:
                shutil.rmtree(storage.stage_dir(self.root, self.name, stage), ignore_errors=True)
            raise StageError(label, exc) from exc

    def queries(self, backend: querygen.CompletionBackend | None) -> list[sources.SourceQuery]:
        config = self.config
        if config.query_file is not None:
            self.notes["queries"] = "external"
            loaded = sources.load_queries(config.query_file, default_source=config.source)
            return sources.dedup_queries(loaded)
        self.notes["queries"] = "generated"
        backend = backend or _default_backend(config)
        return querygen.generate_queries(config.source, backend, query_count=config.query_count)

    def collect(
        self, queries: list[sources.SourceQuery], transport: sources.Transport
    ) -> list[TimeSeries]:
        collected, failures = sources.fetch_all(queries, transport)
        self.notes["fetch_failures"] = str(len(failures))
        if not collected:
            raise sources.EmptyResultError("no series collected")
        storage.save_stage(self.root, self.name, collected)
        return collected

    def prune(self, originals: list[TimeSeries]) -> list[TimeSeries]:
        pruned = prune(originals, self.config.detector)
        if not pruned:
            raise PruningEmptyError(f"dataset {self.name!r}: no series with a detected shift")
        storage.save_stage(self.root, self.name, pruned)
        return pruned

    def augment(self, pruned: list[TimeSeries]) -> list[TimeSeries]:
        augmented = augment_set(pruned, _resolved_augment(self.config), self.config.detector)
        storage.save_stage(self.root, self.name, augmented)
        unverified = sum(
            1 for s in augmented if s.provenance is not None and not s.provenance.shift_verified
        )
        self.notes["unverified_augmented"] = str(unverified)
        return augmented


def run(
    config: PipelineConfig,
    *,
    force: bool = False,
    now: str | None = None,
    transport: sources.Transport | None = None,
    backend: querygen.CompletionBackend | None = None,
) -> DatasetManifest:
    """Execute the full pipeline and return the written manifest.

    ``now`` fixes ``created_at`` for reproducible manifests; otherwise
    the current UTC time is used. An existing dataset directory is only
    overwritten with ``force=True``.
    """
    dataset_root = storage.dataset_dir(config.output_dir, config.dataset_name)
    if dataset_root.exists() and any(dataset_root.iterdir()):
        if not force:
            raise ConfigError(
                f"dataset directory {dataset_root} already exists; pass force to overwrite"
            )
        shutil.rmtree(dataset_root)

    transport = transport or sources.make_transport(config.transport_mode, config.fixtures_dir)
    runner = _Runner(config)

    queries = runner._stage("queries", None, lambda: runner.queries(backend))
    originals = runner._stage(
        "collect", Stage.ORIGINAL, lambda: runner.collect(queries, transport)
    )
    pruned = runner._stage("prune", Stage.PRUNED, lambda: runner.prune(originals))
    augmented = runner._stage("augment", Stage.AUGMENTED, lambda: runner.augment(pruned))

    lengths = [len(s) for s in originals]
    manifest = DatasetManifest(
        name=config.dataset_name,
        domain=config.domain or _catalog_field(config, "domain"),
        description=config.description or _catalog_field(config, "description"),
        length_min=min(lengths),
        length_max=max(lengths),
        count_original=len(originals),
        count_pruned=len(pruned),
        count_augmented=len(augmented),
        seed=config.master_seed,
        created_at=now or storage.utc_now_iso(),
        notes=dict(sorted(runner.notes.items())),
    )
    storage.write_manifest(config.output_dir, manifest)
    return manifest


def _catalog_field(config: PipelineConfig, key: str) -> str:
    """Default report fields from the discovery catalog when it exists."""
    catalog_path = config.output_dir / "catalog.json"
    if not catalog_path.exists():
        return ""
    try:
        for entry in querygen.load_catalog(catalog_path):
            name = str(entry.get("name", "")).lower()
            if config.source.value in name or config.dataset_name.lower() in name:
                return str(entry.get(key, ""))
    except (OSError, json.JSONDecodeError, ValueError):
        return ""
    return ""


# --- train/test splitting -----------------------------------------------------


def split_train_test(
    series_list: list[TimeSeries],
    ratio: float,
    seed: int,
    train_parent_count: int | None = None,
) -> tuple[list[TimeSeries], list[TimeSeries]]:
    """Deterministic leakage-free split at the level of pruned parents.

    Augmented series follow their parent to whichever side it lands on.
    The train side gets ``round(ratio * n_parents)`` parents unless
    ``train_parent_count`` overrides the arithmetic (useful to reproduce
    externally fixed splits).
    """
    if not series_list:
        raise EmptyInputError("cannot split an empty series list")
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")

    parent_ids: list[str] = []
    children: dict[str, list[TimeSeries]] = {}
    parents: dict[str, TimeSeries] = {}
    for series in series_list:
        if series.provenance is None:
            parents[series.id] = series
            parent_ids.append(series.id)
        else:
            children.setdefault(series.provenance.parent_id, []).append(series)
    orphans = set(children) - set(parents)
    for pid in sorted(orphans):  # augmented-only input: treat the group as its own unit
        parent_ids.append(pid)

    parent_ids = sorted(set(parent_ids))
    rng = np.random.default_rng(seed)
    order = [parent_ids[i] for i in rng.permutation(len(parent_ids))]
    if train_parent_count is None:
        n_train = int(ratio * len(order) + 0.5)
    else:
        if not 0 <= train_parent_count <= len(order):
            raise ValueError("train_parent_count out of range")
        n_train = train_parent_count
    train_set = set(order[:n_train])

    train: list[TimeSeries] = []
    test: list[TimeSeries] = []
    for series in series_list:
        pid = series.provenance.parent_id if series.provenance is not None else series.id
        (train if pid in train_set else test).append(series)
    return train, test


def split_dataset(
    output_dir: str | Path,
    name: str,
    ratio: float,
    seed: int,
    train_parent_count: int | None = None,
    include_test_augmented: bool = False,
) -> dict:
    """Split a stored dataset and write id lists under ``splits/``.

    The default mirrors the intended training workflow: the train side is
    the augmented expansions of its parents, while the test side keeps
    only un-augmented parents. ``include_test_augmented`` keeps augmented
    series on the test side too.
    """
    pruned = storage.load_stage(output_dir, name, Stage.PRUNED)
    augmented = storage.load_stage(output_dir, name, Stage.AUGMENTED)
    if not pruned:
        raise EmptyInputError(f"dataset {name!r} has no pruned series to split")
    train, test = split_train_test(pruned + augmented, ratio, seed, train_parent_count)

    def bucket(items: list[TimeSeries]) -> dict:
        return {
            "parents": sorted(s.id for s in items if s.provenance is None),
            "augmented": sorted(s.id for s in items if s.provenance is not None),
        }

    train_ids = bucket(train)
    test_ids = bucket(test)
    if not include_test_augmented:
        test_ids["augmented"] = []

    summary = {
        "dataset": name,
        "ratio": ratio,
        "seed": seed,
        "train": train_ids,
        "test": test_ids,
        "counts": {
            "train_parents": len(train_ids["parents"]),
            "train_augmented": len(train_ids["augmented"]),
            "test_parents": len(test_ids["parents"]),
            "test_augmented": len(test_ids["augmented"]),
        },
    }
    splits_dir = storage.dataset_dir(output_dir, name) / "splits"
    splits_dir.mkdir(parents=True, exist_ok=True)
    for side in ("train", "test"):
        with open(splits_dir / f"{side}.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(summary[side], fh, indent=2, sort_keys=True)
            fh.write("\n")
    with open(splits_dir / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# --- reporting ------------------------------------------------------------------

_REPORT_COLUMNS = (
    "name",
    "domain",
    "description",
    "length_min",
    "length_max",
    "count_original",
    "count_pruned",
    "count_augmented",
)


def report(manifest: DatasetManifest, fmt: str = "text") -> str:
    """Render one summary row; ``csv`` emits a header line plus the row."""
    values = [str(getattr(manifest, col)) for col in _REPORT_COLUMNS]
    if fmt == "csv":
        import csv
        import io

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_REPORT_COLUMNS)
        writer.writerow(v.replace("\n", " ") for v in values)
        return buf.getvalue()
    if fmt == "text":
        pairs = [
            f"name: {manifest.name}",
            f"domain: {manifest.domain or '-'}",
            f"description: {manifest.description or '-'}",
            f"length: {manifest.length_min}..{manifest.length_max}",
            f"original: {manifest.count_original}",
            f"pruned: {manifest.count_pruned}",
            f"augmented: {manifest.count_augmented}",
        ]
        return " | ".join(pairs) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def _fixed_now() -> str | None:
    """CLI hook: honor SOURCE_DATE_EPOCH for reproducible manifests."""
    import os

    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if not epoch:
        return None
    try:
        stamp = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    except ValueError:
        return None
    return stamp.replace(microsecond=0).isoformat()
