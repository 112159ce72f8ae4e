"""
Experiment Runner: train-on-X / test-on-Y channel estimation sweeps.

A cell is one (method, train scene, test scene, SNR). Every test item draws
its observation from a stream keyed by (scene, SNR, item), so all methods
see the same Y and adding items never shifts earlier streams. Per-item
linear NMSE goes to items.csv; the cell's linear mean (in dB) and 95% CI go
to results.csv. Finished cells are cached under cells/ so an interrupted
run or sweep resumes without recomputing them.
"""

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from tqdm.auto import tqdm

from ..core.config import configure_torch, get_settings
from ..core.errors import ChannelDiffusionError
from ..core.seeding import derive_seed, hash_content, numpy_rng, torch_generator
from ..schemas.base import Method
from ..schemas.channels import MIXED_SCENE, SCENE_PRESETS, UPAGeometry
from ..schemas.experiments import ITEM_COLUMNS, RESULT_COLUMNS, ExperimentConfig, ResultRecord
from ..services.baselines import (
    AngularDictionary,
    LMMSEFilter,
    build_dictionary,
    lmmse_filter,
    ls_estimate,
    nmse_linear,
    omp_estimate,
    omp_residual_threshold,
)
from ..services.channel_data import (
    ChannelDataset,
    DatasetError,
    generate_named_dataset,
    load_dataset,
    sample_covariance,
    save_dataset,
)
from ..services.diffusion_core import Checkpoint, CheckpointError, load_checkpoint
from ..services.guided_sampler import SamplerAbortError, estimate_channel, posterior_sample
from ..services.measurement import Observation, PilotBlock, RealLinearOp, make_pilots, observe


logger = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
ITEMS_FILE = "items.csv"
CELLS_DIR = "cells"
CI_Z = 1.96

Estimator = Callable[[Observation, int, str, float], np.ndarray]


# =============================================================================
# EXCEPTIONS
# =============================================================================


class ExperimentError(ChannelDiffusionError):
    """Base exception for experiment runs."""
    pass


class MissingArtifactError(ExperimentError):
    """A dataset or checkpoint the config needs cannot be resolved."""
    pass


class CellFailedError(ExperimentError):
    """Too many items of a cell aborted."""
    pass


class DuplicateExperimentError(ExperimentError):
    """Two sweep cells share an experiment_id."""
    pass


# =============================================================================
# DATA TRANSFER OBJECTS
# =============================================================================


@dataclass(frozen=True, order=True)
class CellKey:
    experiment_id: str
    method: str
    scene_train: str
    scene_test: str
    snr_db: float

    def as_tuple(self) -> tuple[str, str, str, str, float]:
        return (self.experiment_id, self.method, self.scene_train, self.scene_test, self.snr_db)


@dataclass
class ItemResult:
    index: int
    nmse_linear: float
    aborted: bool = False


@dataclass
class CellResult:
    key: CellKey
    record: ResultRecord
    items: list[ItemResult] = field(default_factory=list)


# =============================================================================
# AGGREGATION
# =============================================================================


def aggregate_nmse(values: Sequence[float]) -> tuple[float, float]:
    """
    Linear-domain mean converted to dB, and the 95% CI half-width in dB.

    The half-width is 10 log10(m + 1.96 s / sqrt(n)) - 10 log10(m) with the
    sample standard deviation s (0 for a single item).
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ExperimentError("cannot aggregate an empty cell")
    mean = max(float(x.mean()), 1e-10)
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    half = CI_Z * std / math.sqrt(x.size)
    return 10 * math.log10(mean), 10 * math.log10(mean + half) - 10 * math.log10(mean)


# =============================================================================
# ARTIFACTS
# =============================================================================


def _resolve_dataset(cfg: ExperimentConfig, scene: str, role: str, n: int) -> ChannelDataset:
    name = f"{scene}-{role}"
    path = cfg.datasets_dir / name if cfg.datasets_dir else None
    if path is not None and (path / "meta.json").exists():
        ds = load_dataset(path)
    elif cfg.generate_missing_datasets:
        try:
            ds = generate_named_dataset(scene, n, derive_seed(cfg.seed, "dataset", scene, role))
        except DatasetError as e:
            raise MissingArtifactError(str(e)) from e
        if path is not None:
            save_dataset(ds, path)
    else:
        raise MissingArtifactError(f"Dataset '{name}' not found under {cfg.datasets_dir}")

    if len(ds) < n:
        raise MissingArtifactError(f"Dataset '{name}' has {len(ds)} channels, need {n}")
    if len(ds) == n:
        return ds
    meta = ds.meta.model_copy(update={"n_samples": n, "provenance": None})
    return ChannelDataset(samples=ds.samples[:n], meta=meta)


def _geometries(scene: str) -> tuple[UPAGeometry, UPAGeometry]:
    # mixed and imported scenes share the preset array geometry
    preset = SCENE_PRESETS.get(scene) or next(iter(SCENE_PRESETS.values()))
    return preset.rx_geometry, preset.tx_geometry


@dataclass
class _Context:
    """Everything a cell needs, resolved once before any cell runs."""

    test_sets: dict[str, ChannelDataset]
    pilots: PilotBlock
    op: RealLinearOp
    covariance: np.ndarray | None = None
    dictionary: AngularDictionary | None = None
    checkpoint: Checkpoint | None = None
    lmmse_filters: dict[float, LMMSEFilter] = field(default_factory=dict)


def _prepare(cfg: ExperimentConfig) -> _Context:
    for scene in [cfg.train_scene, *cfg.test_scenes]:
        if scene != MIXED_SCENE and scene not in SCENE_PRESETS:
            if not (cfg.datasets_dir and (cfg.datasets_dir / f"{scene}-test").exists()):
                raise MissingArtifactError(f"Unknown scene '{scene}' and no dataset on disk")

    checkpoint = None
    test_sets = {
        scene: _resolve_dataset(cfg, scene, "test", cfg.n_test_channels)
        for scene in cfg.test_scenes
    }
    shapes = {ds.shape for ds in test_sets.values()}
    if len(shapes) != 1:
        raise ExperimentError(f"Test scenes have different shapes: {sorted(shapes)}")
    n_rx, n_tx = shapes.pop()

    if Method.DM in cfg.methods:
        assert cfg.checkpoint_path is not None
        path = get_settings().checkpoint_path(str(cfg.checkpoint_path))
        try:
            checkpoint = load_checkpoint(path, expected_shape=(n_rx, n_tx))
        except CheckpointError as e:
            raise MissingArtifactError(str(e)) from e

    pilots = make_pilots(n_tx, cfg.n_pilots, cfg.pilot_kind, derive_seed(cfg.seed, "pilots"))
    ctx = _Context(test_sets=test_sets, pilots=pilots, op=RealLinearOp(pilots), checkpoint=checkpoint)

    if Method.LMMSE in cfg.methods and cfg.lmmse_covariance == "sample":
        train_set = _resolve_dataset(cfg, cfg.train_scene, "train", cfg.n_covariance_samples)
        C = sample_covariance(train_set)
        ctx.covariance = 0.5 * (C + C.conj().T)
    if Method.OMP in cfg.methods:
        rx_geom, tx_geom = _geometries(cfg.train_scene)
        ctx.dictionary = build_dictionary(rx_geom, tx_geom, cfg.omp_oversampling)
    return ctx


# =============================================================================
# ESTIMATORS
# =============================================================================


def _estimator(method: Method, cfg: ExperimentConfig, ctx: _Context) -> Estimator:
    P = ctx.pilots.P

    if method == Method.LS:
        return lambda obs, index, scene, snr: ls_estimate(obs, P)

    if method == Method.LMMSE:
        def lmmse(obs: Observation, index: int, scene: str, snr: float) -> np.ndarray:
            if snr not in ctx.lmmse_filters:
                ctx.lmmse_filters[snr] = lmmse_filter(P, ctx.covariance, obs.sigma_n, obs.Y.shape[0])
            return ctx.lmmse_filters[snr].apply(obs)
        return lmmse

    if method == Method.OMP:
        assert ctx.dictionary is not None
        dictionary = ctx.dictionary

        def omp(obs: Observation, index: int, scene: str, snr: float) -> np.ndarray:
            n_rx, n_p = obs.Y.shape
            threshold = omp_residual_threshold(obs.sigma_n, n_rx, n_p)
            return omp_estimate(obs, P, dictionary, cfg.omp_max_atoms, threshold)
        return omp

    assert ctx.checkpoint is not None and ctx.checkpoint.sde_config is not None
    checkpoint = ctx.checkpoint
    score_fn = checkpoint.score_fn()

    def dm(obs: Observation, index: int, scene: str, snr: float) -> np.ndarray:
        generator = torch_generator(
            cfg.seed, "dm", cfg.train_scene, scene, repr(snr), index
        )
        result = posterior_sample(
            score_fn, obs, ctx.op, checkpoint.model.sde, cfg.sampler, generator
        )
        return estimate_channel(result).mean
    return dm


# =============================================================================
# CELLS
# =============================================================================


def _fingerprint(cfg: ExperimentConfig) -> str:
    relevant = cfg.model_dump(mode="json", exclude={"results_dir", "record_wall_time"})
    return hash_content(json.dumps(relevant, sort_keys=True))


def _cell_file(out_dir: Path, key: CellKey) -> Path:
    return out_dir / CELLS_DIR / f"{hash_content(repr(key.as_tuple()))[:24]}.json"


def _load_cell(path: Path, fingerprint: str) -> CellResult | None:
    if not path.exists():
        return None
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("fingerprint") != fingerprint:
        return None
    return CellResult(
        key=CellKey(*data["key"]),
        record=ResultRecord.model_validate(data["record"]),
        items=[ItemResult(**item) for item in data["items"]],
    )


def _save_cell(path: Path, fingerprint: str, cell: CellResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "fingerprint": fingerprint,
        "key": list(cell.key.as_tuple()),
        "record": cell.record.model_dump(mode="json"),
        "items": [item.__dict__ for item in cell.items],
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")


def run_cell(cfg: ExperimentConfig, ctx: _Context, method: Method, scene: str, snr: float) -> CellResult:
    """Evaluate every test item of one cell."""
    key = CellKey(cfg.experiment_id, method.value, cfg.train_scene, scene, float(snr))
    estimator = _estimator(method, cfg, ctx)
    dataset = ctx.test_sets[scene]
    items: list[ItemResult] = []

    started = time.perf_counter()
    progress = tqdm(
        range(len(dataset)),
        desc=f"{method.value}/{scene}/{snr:g}dB",
        leave=False,
        disable=not get_settings().show_progress,
    )
    for index in progress:
        H = dataset[index].astype(np.complex128)
        obs = observe(H, ctx.pilots, snr, numpy_rng(cfg.seed, "observation", scene, repr(float(snr)), index))
        try:
            estimate = estimator(obs, index, scene, float(snr))
        except SamplerAbortError as e:
            logger.warning(f"{key.as_tuple()} item {index} aborted: {e}")
            items.append(ItemResult(index=index, nmse_linear=math.nan, aborted=True))
            continue
        items.append(ItemResult(index=index, nmse_linear=nmse_linear(estimate, H)))
    elapsed = time.perf_counter() - started

    n_aborted = sum(item.aborted for item in items)
    if n_aborted > cfg.max_abort_fraction * len(items):
        raise CellFailedError(
            f"{n_aborted}/{len(items)} items aborted in cell {key.as_tuple()} "
            f"(limit {cfg.max_abort_fraction:.1%})"
        )

    mean_db, ci_db = aggregate_nmse([item.nmse_linear for item in items if not item.aborted])
    record = ResultRecord(
        experiment_id=cfg.experiment_id,
        method=method.value,
        scene_train=cfg.train_scene,
        scene_test=scene,
        snr_db=float(snr),
        n_pilots=cfg.n_pilots,
        seed=cfg.seed,
        nmse_db_mean=mean_db,
        nmse_db_ci95=ci_db,
        n_test=len(items) - n_aborted,
        wall_seconds=elapsed if cfg.record_wall_time else 0.0,
    )
    logger.info(
        f"{method.value} {cfg.train_scene}->{scene} @ {snr:g} dB: "
        f"{mean_db:.2f} +/- {ci_db:.2f} dB ({n_aborted} aborted, {elapsed:.1f}s)"
    )
    return CellResult(key=key, record=record, items=items)


# =============================================================================
# OUTPUT
# =============================================================================


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_results(out_dir: Path, cells: Sequence[CellResult]) -> Path:
    """results.csv and items.csv in canonical (cell key, item index) order."""
    ordered = sorted(cells, key=lambda c: c.key)
    results_path = out_dir / RESULTS_FILE
    _write_csv(results_path, RESULT_COLUMNS, [c.record.to_row() for c in ordered])
    item_rows = [
        [*(str(v) for v in c.key.as_tuple()[:4]), repr(c.key.snr_db), str(item.index),
         repr(item.nmse_linear), str(item.aborted).lower()]
        for c in ordered
        for item in sorted(c.items, key=lambda i: i.index)
    ]
    _write_csv(out_dir / ITEMS_FILE, ITEM_COLUMNS, item_rows)
    return results_path


# =============================================================================
# ENTRY POINTS
# =============================================================================


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Parse a JSON experiment config; unknown keys are rejected."""
    return ExperimentConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> list[ResultRecord]:
    """
    Evaluate every (method, test scene, SNR) cell and write the CSVs.

    All artifacts are resolved before the first cell runs. Records come back
    in canonical order.
    """
    configure_torch()
    results_root = cfg.results_dir or get_settings().results_dir
    out = Path(out_dir) if out_dir is not None else results_root / cfg.experiment_id
    logger.info(
        f"Running experiment '{cfg.experiment_id}': {len(cfg.methods)} methods x "
        f"{len(cfg.test_scenes)} scenes x {len(cfg.snr_grid_db)} SNRs, n={cfg.n_test_channels}"
    )
    fingerprint = _fingerprint(cfg)
    ctx = _prepare(cfg)

    cells: list[CellResult] = []
    for method, scene, snr in itertools.product(cfg.methods, cfg.test_scenes, cfg.snr_grid_db):
        key = CellKey(cfg.experiment_id, method.value, cfg.train_scene, scene, float(snr))
        path = _cell_file(out, key)
        cached = _load_cell(path, fingerprint)
        if cached is not None:
            logger.info(f"Resuming cell {key.as_tuple()} from {path}")
            cells.append(cached)
            continue
        cell = run_cell(cfg, ctx, method, scene, snr)
        _save_cell(path, fingerprint, cell)
        cells.append(cell)

    results_path = write_results(out, cells)
    logger.info(f"Wrote {len(cells)} records to {results_path}")
    return [c.record for c in sorted(cells, key=lambda c: c.key)]


def expand_grid(base: ExperimentConfig, grid: dict[str, Sequence[Any]]) -> list[ExperimentConfig]:
    """
    Cartesian product of field overrides.

    Each combination gets its own experiment_id (unless the grid sets one)
    and the seed derive_seed(base.seed, cell key) (unless the grid sets one).
    """
    unknown = set(grid) - set(ExperimentConfig.model_fields)
    if unknown:
        raise ExperimentError(f"Unknown sweep fields: {sorted(unknown)}")
    keys = list(grid)
    configs: list[ExperimentConfig] = []
    for values in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, values))
        cell_key = json.dumps(overrides, sort_keys=True, default=str)
        overrides.setdefault(
            "experiment_id", f"{base.experiment_id}-{hash_content(cell_key)[:10]}"
        )
        overrides.setdefault("seed", derive_seed(base.seed, "sweep", cell_key))
        data = {**base.model_dump(), **overrides}
        configs.append(ExperimentConfig.model_validate(data))

    seen: set[str] = set()
    for config in configs:
        if config.experiment_id in seen:
            raise DuplicateExperimentError(f"Duplicate experiment_id '{config.experiment_id}'")
        seen.add(config.experiment_id)
    return configs


def sweep(
    base: ExperimentConfig,
    grid: dict[str, Sequence[Any]],
    out_dir: str | Path | None = None,
) -> list[ResultRecord]:
    """Run every grid cell (resuming finished ones) and write a combined CSV."""
    results_root = base.results_dir or get_settings().results_dir
    out = Path(out_dir) if out_dir is not None else results_root / base.experiment_id
    configs = expand_grid(base, grid)
    logger.info(f"Sweep '{base.experiment_id}': {len(configs)} experiments")

    records: list[ResultRecord] = []
    for config in configs:
        records.extend(run_experiment(config, out / config.experiment_id))

    records.sort(key=lambda r: (r.experiment_id, r.method, r.scene_train, r.scene_test, r.snr_db))
    _write_csv(out / RESULTS_FILE, RESULT_COLUMNS, [r.to_row() for r in records])
    return records
