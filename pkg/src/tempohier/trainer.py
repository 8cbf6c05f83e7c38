"""Training loop with validation-based checkpoint selection, and the learning-rate /
loss-rescaling grid search."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FeatureSet, build_features
from .errors import ContractError, TrainingError
from .hierarchy import HierarchySpec
from .model import ModelConfig, init_model, predict, training_step
from .optim import AdamState

logger = logging.getLogger(__name__)

GRID_LRS = (1e-4, 1e-3, 4e-3)
GRID_RESCALE = (True, False)
THREADS_ENV = "TEMPOHIER_THREADS"

# Table-4 style defaults: (kind, loss) -> (rescale, lr)
DEFAULTS = {
    ("mono", "nbnll"): (True, 1e-3),
    ("mono", "mse"): (False, 1e-3),
    ("encdec", "nbnll"): (False, 4e-3),
    ("encdec", "mse"): (False, 1e-4),
}


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class TrainConfig:
    loss: str = "mse"
    rescale: bool = False
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 30
    clip: float = 1.0
    seed: int = 0
    steps_per_epoch: int | None = None
    hidden: int | None = None
    blocks: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 0 or self.batch_size <= 0 or self.clip <= 0:
            raise ContractError(f"invalid training config {self}")


@dataclass
class TrainResult:
    config: ModelConfig
    params: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_rmsed: float = math.inf
    initial_val_rmsed: float = math.inf
    aborted: str | None = None

    def write_history(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "l_enc", "l_dec", "val_rmsed"])
            for row in self.history:
                l_enc = "" if row["l_enc"] is None else f"{row['l_enc']:.10g}"
                w.writerow([row["epoch"], l_enc, f"{row['l_dec']:.10g}", f"{row['val_rmsed']:.10g}"])
        return path


def forecast_origin(cfg: ModelConfig, params, fs: FeatureSet, origin: int, chunk: int = 1024,
                    workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fine (n, h) and coarse (n, k) forecasts for every series at one origin."""
    n = fs.n_series
    starts = list(range(0, n, chunk))

    def run(a):
        batch = fs.window(np.arange(a, min(a + chunk, n)), origin, cfg.spec)
        return predict(cfg, params, batch)

    workers = workers or worker_count()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(a) for a in starts]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def validation_rmsed(cfg: ModelConfig, params, fs: FeatureSet) -> float:
    origin = fs.ds.split_origin("validation")
    fine, _ = forecast_origin(cfg, params, fs, origin)
    y = fs.ds.sales[:, origin:origin + cfg.spec.h].astype(np.float64)
    return float(np.sqrt(np.mean((y - fine) ** 2)))


def train(kind: str, config: TrainConfig, data, spec: HierarchySpec | None = None) -> TrainResult:
    """Train ``kind`` ("encdec" or "mono") and keep the epoch with the lowest validation RMSEd."""
    spec = spec or HierarchySpec()
    fs = data if isinstance(data, FeatureSet) else build_features(data)
    cfg = ModelConfig(kind, fs.schema, spec, config.loss, config.hidden, config.blocks, config.dropout)
    params = init_model(cfg, config.seed)
    rng = np.random.default_rng(config.seed)
    state = AdamState(lr=config.lr)
    steps = config.steps_per_epoch or math.ceil(fs.n_series / config.batch_size)

    initial = validation_rmsed(cfg, params, fs)
    result = TrainResult(cfg, params, best_val_rmsed=initial, initial_val_rmsed=initial)
    for epoch in range(1, config.epochs + 1):
        enc_sum = dec_sum = 0.0
        try:
            for _ in range(steps):
                batch = fs.sample_windows(rng, spec, config.batch_size)
                params, l_enc, l_dec = training_step(
                    cfg, params, batch, state, config.rescale, config.clip, rng
                )
                enc_sum += l_enc if l_enc is not None else 0.0
                dec_sum += l_dec
            val = validation_rmsed(cfg, params, fs)
            if not np.isfinite(val):
                raise TrainingError(f"non-finite validation RMSEd at epoch {epoch}")
        except TrainingError as exc:
            logger.error("training aborted at epoch %d: %s", epoch, exc)
            result.aborted = str(exc)
            break
        row = {
            "epoch": epoch,
            "l_enc": enc_sum / steps if kind == "encdec" else None,
            "l_dec": dec_sum / steps,
            "val_rmsed": val,
        }
        result.history.append(row)
        logger.info("epoch %d l_enc=%s l_dec=%.5f val_rmsed=%.5f", epoch, row["l_enc"], row["l_dec"], val)
        if val < result.best_val_rmsed or result.best_epoch == 0:
            result.best_val_rmsed, result.best_epoch = val, epoch
            result.params = params
    return result


@dataclass
class GridRun:
    lr: float
    rescale: bool
    val_rmsed: float
    best_epoch: int
    result: TrainResult | None = field(default=None, repr=False, compare=False)


def select_winner(runs: list[GridRun]) -> GridRun:
    """Lowest validation RMSEd; ties go to the smaller learning rate."""
    return min(runs, key=lambda r: (r.val_rmsed, r.lr))


def grid_search(kind: str, data, spec: HierarchySpec | None = None, base: TrainConfig | None = None,
                lrs=GRID_LRS, rescales=GRID_RESCALE, workers: int | None = None):
    """Train every (lr, rescale) pair; returns (runs, winner)."""
    base = base or TrainConfig()
    fs = data if isinstance(data, FeatureSet) else build_features(data)
    grid = [(lr, rs) for rs in rescales for lr in lrs]

    def run(cell):
        lr, rs = cell
        cfg = TrainConfig(**{**base.__dict__, "lr": lr, "rescale": rs})
        res = train(kind, cfg, fs, spec)
        return GridRun(lr, rs, res.best_val_rmsed, res.best_epoch, res)

    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            runs = list(ex.map(run, grid))
    else:
        runs = [run(c) for c in grid]
    return runs, select_winner(runs)
