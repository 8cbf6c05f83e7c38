"""Point-forecast metrics: WRMSSE over the 12 M5 aggregation levels, RMSE at
daily / weekly / residual resolution, median fraction of explained variance
and mean absolute deviation.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DataError, DimensionError
from .hierarchy import HierarchySpec, bin_average, upsample

logger = logging.getLogger(__name__)

WEIGHT_DAYS = 28

# (level name, label columns); an empty tuple is the grand total
LEVELS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("total", ()),
    ("state", ("state_id",)),
    ("store", ("store_id",)),
    ("category", ("cat_id",)),
    ("department", ("dept_id",)),
    ("state_category", ("state_id", "cat_id")),
    ("state_department", ("state_id", "dept_id")),
    ("store_category", ("store_id", "cat_id")),
    ("store_department", ("store_id", "dept_id")),
    ("item", ("item_id",)),
    ("item_state", ("item_id", "state_id")),
    ("item_store", ("item_id", "store_id")),
)


@dataclass
class AggregationLevel:
    name: str
    keys: list[str]
    codes: np.ndarray  # bottom series -> aggregate index

    @property
    def size(self) -> int:
        return len(self.keys)

    @property
    def matrix(self) -> sparse.csr_matrix:
        n = len(self.codes)
        return sparse.csr_matrix(
            (np.ones(n), (self.codes, np.arange(n))), shape=(self.size, n)
        )

    def aggregate(self, x: np.ndarray) -> np.ndarray:
        """Sum bottom-level rows of ``x`` into this level's aggregates."""
        return np.asarray(self.matrix @ np.asarray(x, dtype=np.float64))

    def aggregate_blocks(self, x: np.ndarray, max_rows: int = 4096):
        """Yield (first, stop, block) aggregates for consecutive groups, reading at
        most about ``max_rows`` bottom rows of ``x`` at a time."""
        order = np.argsort(self.codes, kind="stable")
        starts = np.concatenate([[0], np.cumsum(np.bincount(self.codes, minlength=self.size))])
        g = 0
        while g < self.size:
            stop = int(np.searchsorted(starts, starts[g] + max_rows, side="right")) - 1
            stop = min(max(stop, g + 1), self.size)
            rows = np.asarray(x[order[starts[g]:starts[stop]]], dtype=np.float64)
            yield g, stop, np.add.reduceat(rows, starts[g:stop] - starts[g], axis=0)
            g = stop


@dataclass
class AggregationTree:
    levels: list[AggregationLevel]

    @property
    def n_series(self) -> int:
        return sum(lv.size for lv in self.levels)

    @property
    def n_bottom(self) -> int:
        return len(self.levels[0].codes)


def build_aggregation_tree(labels) -> AggregationTree:
    """The 12 M5 levels from per-series labels (a dict of arrays, or a dataset)."""
    labels = getattr(labels, "labels", labels)
    n = None
    for col in ("item_id", "dept_id", "cat_id", "store_id", "state_id"):
        if col not in labels:
            raise DataError(f"missing label column {col!r}")
        arr = np.asarray(labels[col])
        if n is None:
            n = len(arr)
        elif len(arr) != n:
            raise DataError(f"label column {col!r} has {len(arr)} entries, expected {n}")
        if any(v is None or v == "" or v == "nan" for v in arr):
            raise DataError(f"label column {col!r} has empty entries")
    levels = []
    for name, cols in LEVELS:
        if not cols:
            levels.append(AggregationLevel(name, ["Total"], np.zeros(n, dtype=np.int64)))
            continue
        joined = np.asarray(labels[cols[0]]).astype(str)
        for c in cols[1:]:
            joined = np.char.add(np.char.add(joined, "_"), np.asarray(labels[c]).astype(str))
        keys, codes = np.unique(joined, return_inverse=True)
        levels.append(AggregationLevel(name, list(keys), codes.astype(np.int64)))
    return AggregationTree(levels)


def rmsse_denominator(history) -> np.ndarray:
    """Mean squared one-step naive error after dropping leading zeros, per row."""
    history = np.atleast_2d(np.asarray(history, dtype=np.float64))
    nz = history != 0
    first = np.where(nz.any(axis=1), nz.argmax(axis=1), history.shape[1])
    diff2 = np.diff(history, axis=1) ** 2
    # diff index t pairs days t and t+1; keep those with t >= first
    mask = np.arange(diff2.shape[1])[None, :] >= first[:, None]
    count = mask.sum(axis=1)
    total = np.where(mask, diff2, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), 0.0)


def rmsse(y_train, y_test, y_hat) -> float:
    """Root mean squared scaled error of one series; nan (with a warning) when the scale is 0."""
    y_train = np.asarray(y_train, dtype=np.float64)
    y_test = np.asarray(y_test, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y_test.shape != y_hat.shape:
        raise DimensionError(f"test {y_test.shape} and forecast {y_hat.shape} differ")
    denom = float(rmsse_denominator(y_train)[0])
    if denom == 0.0:
        warnings.warn("RMSSE scale is zero; series excluded", RuntimeWarning, stacklevel=2)
        return float("nan")
    return float(np.sqrt(np.mean((y_test - y_hat) ** 2) / denom))


def level_weights(tree: AggregationTree, dollar_sales: np.ndarray, valid: list[np.ndarray] | None = None):
    """Per-level weight vectors summing to 1/12 each.

    ``dollar_sales`` is the per-bottom-series sales value used for weighting;
    ``valid`` optionally masks aggregates excluded from their level.
    """
    out = []
    n_levels = len(tree.levels)
    for i, lv in enumerate(tree.levels):
        w = lv.aggregate(dollar_sales)
        if valid is not None:
            w = np.where(valid[i], w, 0.0)
        total = w.sum()
        if total <= 0:
            raise DataError(f"level {lv.name!r} has zero sales volume for weighting")
        out.append(w / total / n_levels)
    return out


def wrmsse_arrays(tree: AggregationTree, history: np.ndarray, actual: np.ndarray,
                  forecast: np.ndarray, dollar_sales: np.ndarray) -> float:
    """WRMSSE from bottom-level arrays.

    ``history`` (n, T) precedes the evaluated window, ``actual`` and
    ``forecast`` are (n, h), ``dollar_sales`` (n,) is the weighting volume.
    """
    n = tree.n_bottom
    if forecast.shape != actual.shape or actual.shape[0] != n or history.shape[0] != n:
        raise DimensionError(
            f"shapes: history {history.shape}, actual {actual.shape}, forecast {forecast.shape}, bottom {n}"
        )
    if np.isnan(forecast).any():
        raise DataError("missing forecast values")
    scores, valid = [], []
    for lv in tree.levels:
        denom = np.concatenate([rmsse_denominator(b) for _, _, b in lv.aggregate_blocks(history)])
        err = lv.aggregate(np.asarray(actual, dtype=np.float64) - forecast)
        mse = np.mean(err**2, axis=1)
        ok = denom > 0
        if not ok.all():
            logger.warning("level %s: %d series with zero RMSSE scale excluded", lv.name, int((~ok).sum()))
        with np.errstate(divide="ignore", invalid="ignore"):
            scores.append(np.where(ok, np.sqrt(mse / np.where(ok, denom, 1.0)), 0.0))
        valid.append(ok)
    weights = level_weights(tree, dollar_sales, valid)
    return float(sum(np.dot(w, s) for w, s in zip(weights, scores)))


def dollar_volume(ds, origin: int, days: int = WEIGHT_DAYS) -> np.ndarray:
    """Units x price over the ``days`` preceding ``origin`` for every series."""
    start = origin - days
    units = ds.sales[:, start:origin].astype(np.float64)
    return (units * ds.daily_prices(start, origin)).sum(axis=1)


def wrmsse(tree: AggregationTree, forecasts: np.ndarray, ds, origin: int) -> float:
    """WRMSSE of (n_series, h) ``forecasts`` for the window starting at day ``origin``."""
    forecasts = np.asarray(forecasts, dtype=np.float64)
    h = forecasts.shape[1]
    actual = ds.sales[:, origin:origin + h]
    if actual.shape != forecasts.shape:
        raise DataError(f"forecasts shape {forecasts.shape} does not match actuals {actual.shape}")
    return wrmsse_arrays(tree, ds.sales[:, :origin], actual, forecasts, dollar_volume(ds, origin))


def _rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_daily(y, fine) -> float:
    return _rmse(y, fine)


def rmse_weekly(y, coarse, spec: HierarchySpec) -> float:
    return _rmse(bin_average(y, spec), coarse)


def rmse_residual(y, fine, coarse, spec: HierarchySpec) -> float:
    """RMSE between within-bin deviations of the actuals and of the forecast.

    Actual deviations are taken from the actual bin averages, forecast
    deviations from the forecast's coarse level.
    """
    y = np.asarray(y, dtype=np.float64)
    return _rmse(y - upsample(bin_average(y, spec), spec), np.asarray(fine) - upsample(coarse, spec))


def fev(y, y_hat) -> np.ndarray:
    """Per-series fraction of explained variance, floored at 0; 0 for flat series."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    if y.shape != y_hat.shape:
        raise DimensionError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    sse = np.sum((y - y_hat) ** 2, axis=1)
    sst = np.sum((y - y.mean(axis=1, keepdims=True)) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(sst > 0, 1.0 - sse / np.where(sst > 0, sst, 1.0), 0.0)
    return np.maximum(out, 0.0)


def mfev(y, y_hat) -> float:
    return float(np.median(fev(y, y_hat)))


def mad(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    return float(np.mean(np.abs(y - y_hat)))


METRIC_NAMES = ("wrmsse", "rmse_daily", "rmse_weekly", "rmse_residual", "mfev", "mad")


@dataclass
class MetricsReport:
    wrmsse: float
    rmse_daily: float
    rmse_weekly: float
    rmse_residual: float
    mfev: float
    mad: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k}={v:.6f}\n" for k, v in self.as_dict().items())

    def write(self, directory, stem: str = "metrics") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        txt, js = directory / f"{stem}.txt", directory / f"{stem}.json"
        txt.write_text(self.to_text())
        js.write_text(json.dumps(self.as_dict(), indent=2) + "\n")
        return txt, js

    @classmethod
    def from_json(cls, path) -> "MetricsReport":
        return cls(**json.loads(Path(path).read_text()))


def evaluate(ds, tree: AggregationTree, fine: np.ndarray, coarse: np.ndarray, origin: int,
             spec: HierarchySpec) -> MetricsReport:
    """All six metrics for bottom-level forecasts of the window starting at ``origin``."""
    y = ds.sales[:, origin:origin + spec.h].astype(np.float64)
    return MetricsReport(
        wrmsse=wrmsse(tree, fine, ds, origin),
        rmse_daily=rmse_daily(y, fine),
        rmse_weekly=rmse_weekly(y, coarse, spec),
        rmse_residual=rmse_residual(y, fine, coarse, spec),
        mfev=mfev(y, fine),
        mad=mad(y, fine),
    )
