"""M5-format ingestion, synthetic data, feature construction and window sampling."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ContractError, DataError
from .hierarchy import HierarchySpec

logger = logging.getLogger(__name__)

SALES_FILES = ("sales_train_evaluation.csv", "sales_train_validation.csv")
CALENDAR_FILE = "calendar.csv"
PRICES_FILE = "sell_prices.csv"
LABEL_COLUMNS = ("item_id", "dept_id", "cat_id", "store_id", "state_id")
CALENDAR_COLUMNS = ("date", "wm_yr_wk", "weekday", "wday", "month", "year", "d",
                    "event_name_1", "event_type_1", "event_name_2", "event_type_2")
PRICE_COLUMNS = ("store_id", "item_id", "wm_yr_wk", "sell_price")
EVENT_TYPES = ("Cultural", "Sporting", "Religious", "National")

CAT_FEATURES = (
    "item_id", "store_id", "department_id", "category_id", "state_id",
    "weekday", "month", "cultural_event", "sporting_event", "religious_event",
    "national_event", "snap_day",
)
CONT_FEATURES = ("avg_price", "avg_nsales", "daily_sales", "daily_price", "year")
N_STATIC_CAT = 5
SALES_CHANNEL = CONT_FEATURES.index("daily_sales")
SAMPLER_EPS = 0.01


@dataclass
class M5Dataset:
    """Sales matrix plus calendar, prices and per-series labels.

    ``sales`` is (n_series, n_days); the last ``test_days`` form the test
    window, the ``val_days`` before them the validation window.
    """

    ids: np.ndarray
    labels: dict[str, np.ndarray]
    sales: np.ndarray
    calendar: pd.DataFrame
    prices: pd.DataFrame
    val_days: int = 28
    test_days: int = 28

    @property
    def n_series(self) -> int:
        return self.sales.shape[0]

    @property
    def n_days(self) -> int:
        return self.sales.shape[1]

    @property
    def n_train(self) -> int:
        return self.n_days - self.val_days - self.test_days

    def split_origin(self, split: str) -> int:
        """Number of observed days preceding the given evaluation window."""
        if split in ("validation", "val"):
            return self.n_train
        if split == "test":
            return self.n_train + self.val_days
        raise ContractError(f"unknown split {split!r}")

    @cached_property
    def day_week(self) -> np.ndarray:
        """Column index into :attr:`weekly_prices` for every day."""
        wk = self.calendar["wm_yr_wk"].to_numpy()[: self.n_days]
        _, inv = np.unique(wk, return_inverse=True)
        return inv

    @cached_property
    def weekly_prices(self) -> np.ndarray:
        """(n_series, n_weeks) sell prices, forward- then back-filled."""
        weeks = np.unique(self.calendar["wm_yr_wk"].to_numpy()[: self.n_days])
        keys = pd.MultiIndex.from_arrays([self.labels["store_id"], self.labels["item_id"]])
        pr = self.prices
        rows = keys.get_indexer(pd.MultiIndex.from_arrays([pr["store_id"], pr["item_id"]]))
        cols = np.searchsorted(weeks, pr["wm_yr_wk"].to_numpy())
        cols_ok = cols < len(weeks)
        cols_ok[cols_ok] &= weeks[cols[cols_ok]] == pr["wm_yr_wk"].to_numpy()[cols_ok]
        ok = (rows >= 0) & cols_ok
        mat = np.full((self.n_series, len(weeks)), np.nan)
        mat[rows[ok], cols[ok]] = pr["sell_price"].to_numpy(dtype=np.float64)[ok]
        filled = pd.DataFrame(mat).ffill(axis=1).bfill(axis=1).to_numpy()
        missing = np.isnan(filled[:, 0])
        if missing.any():
            logger.warning("%d series have no price records; using price 0", int(missing.sum()))
            filled[missing] = 0.0
        return filled

    def daily_prices(self, start: int, stop: int, rows=None) -> np.ndarray:
        w = self.weekly_prices if rows is None else self.weekly_prices[rows]
        return w[:, self.day_week[start:stop]]


# -- CSV I/O ---------------------------------------------------------------


def _read_csv(path: Path, **kw) -> pd.DataFrame:
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        return pd.read_csv(path, **kw)
    except (pd.errors.ParserError, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_m5(directory, expected_series: int | None = None, expected_days: int | None = None,
            val_days: int = 28, test_days: int = 28) -> M5Dataset:
    """Parse and validate the three M5 CSV files in ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"data directory not found: {directory}")
    sales_path = next((directory / f for f in SALES_FILES if (directory / f).exists()), None)
    if sales_path is None:
        raise DataError(f"missing file: {directory / SALES_FILES[0]}")

    sales_df = _read_csv(sales_path)
    missing = [c for c in ("id",) + LABEL_COLUMNS if c not in sales_df.columns]
    if missing:
        raise DataError(f"{sales_path}: missing columns {missing}")
    day_cols = [c for c in sales_df.columns if c.startswith("d_")]
    if day_cols != [f"d_{i}" for i in range(1, len(day_cols) + 1)]:
        raise DataError(f"{sales_path}: day columns are not a contiguous d_1..d_n sequence")
    values = sales_df[day_cols].to_numpy()
    bad = pd.isna(sales_df[list(("id",) + LABEL_COLUMNS)]).any(axis=1).to_numpy()
    if values.dtype.kind not in "iu":
        vf = values.astype(np.float64, copy=False) if values.dtype.kind == "f" else None
        if vf is None:
            raise DataError(f"{sales_path}: non-numeric sales values")
        bad |= (~np.isfinite(vf) | (vf != np.round(vf))).any(axis=1)
    if bad.any():
        line = int(np.argmax(bad)) + 2
        raise DataError(f"{sales_path}: malformed row at line {line}")
    if (values < 0).any():
        line = int(np.argmax((values < 0).any(axis=1))) + 2
        raise DataError(f"{sales_path}: negative sales at line {line}")
    n, T = values.shape
    if expected_series is not None and n != expected_series:
        raise DataError(f"{sales_path}: {n} series, expected {expected_series}")
    if expected_days is not None and T != expected_days:
        raise DataError(f"{sales_path}: {T} day columns, expected {expected_days}")
    if T <= val_days + test_days:
        raise DataError(f"{sales_path}: only {T} days")

    cal_path = directory / CALENDAR_FILE
    calendar = _read_csv(cal_path)
    missing = [c for c in CALENDAR_COLUMNS if c not in calendar.columns]
    if missing:
        raise DataError(f"{cal_path}: missing columns {missing}")
    if len(calendar) < T:
        raise DataError(f"{cal_path}: {len(calendar)} rows, sales cover {T} days")
    if list(calendar["d"].iloc[:T]) != day_cols:
        raise DataError(f"{cal_path}: 'd' column does not match sales day columns")
    if calendar[["wm_yr_wk", "wday", "month", "year"]].iloc[:T].isna().any().any():
        raise DataError(f"{cal_path}: missing calendar fields")
    calendar = calendar.iloc[:T].reset_index(drop=True)
    for state in np.unique(sales_df["state_id"]):
        if f"snap_{state}" not in calendar.columns:
            raise DataError(f"{cal_path}: no snap_{state} column")

    price_path = directory / PRICES_FILE
    prices = _read_csv(price_path)
    missing = [c for c in PRICE_COLUMNS if c not in prices.columns]
    if missing:
        raise DataError(f"{price_path}: missing columns {missing}")
    if prices["sell_price"].isna().any():
        line = int(np.argmax(prices["sell_price"].isna().to_numpy())) + 2
        raise DataError(f"{price_path}: malformed row at line {line}")

    return M5Dataset(
        ids=sales_df["id"].to_numpy(dtype=str),
        labels={c: sales_df[c].to_numpy(dtype=str) for c in LABEL_COLUMNS},
        sales=values.astype(np.int32),
        calendar=calendar,
        prices=prices,
        val_days=val_days,
        test_days=test_days,
    )


def write_m5(ds: M5Dataset, directory) -> list[Path]:
    """Write ``ds`` as the three M5 CSV files; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sales = pd.DataFrame(ds.sales, columns=[f"d_{i}" for i in range(1, ds.n_days + 1)])
    head = pd.DataFrame({"id": ds.ids, **{c: ds.labels[c] for c in LABEL_COLUMNS}})
    paths = [directory / SALES_FILES[0], directory / CALENDAR_FILE, directory / PRICES_FILE]
    pd.concat([head, sales], axis=1).to_csv(paths[0], index=False)
    ds.calendar.to_csv(paths[1], index=False)
    ds.prices.to_csv(paths[2], index=False, float_format="%.2f")
    return paths


# -- synthetic data --------------------------------------------------------

_SNAP_DAYS = {
    "CA": set(range(1, 11)),
    "TX": {1, 3, 5, 6, 7, 9, 11, 12, 15},
    "WI": {2, 3, 5, 6, 8, 9, 11, 12, 14, 15},
}
_CATS = ("FOODS", "HOBBIES", "HOUSEHOLD")


def _synth_calendar(rng: np.random.Generator, n_days: int) -> pd.DataFrame:
    dates = pd.date_range("2011-01-29", periods=n_days, freq="D")
    week = np.arange(n_days) // 7
    has_event = rng.random(n_days) < 1 / 25
    event_type = rng.integers(0, 4, n_days)
    second = has_event & (rng.random(n_days) < 0.15)
    second_type = rng.integers(0, 4, n_days)
    cal = pd.DataFrame(
        {
            "date": dates.strftime("%Y-%m-%d"),
            "wm_yr_wk": 11101 + week,
            "weekday": dates.day_name(),
            "wday": (dates.dayofweek.to_numpy() + 2) % 7 + 1,  # Saturday = 1
            "month": dates.month,
            "year": dates.year,
            "d": [f"d_{i}" for i in range(1, n_days + 1)],
            "event_name_1": np.where(has_event, [f"Event{j}" for j in range(n_days)], None),
            "event_type_1": np.where(has_event, np.array(EVENT_TYPES)[event_type], None),
            "event_name_2": np.where(second, [f"Extra{j}" for j in range(n_days)], None),
            "event_type_2": np.where(second, np.array(EVENT_TYPES)[second_type], None),
        }
    )
    for state, days in _SNAP_DAYS.items():
        cal[f"snap_{state}"] = dates.day.isin(sorted(days)).astype(int)
    return cal


def synth_generate(seed: int, n_series: int = 100, n_days: int = 400,
                   spec: HierarchySpec | None = None) -> M5Dataset:
    """Deterministic synthetic retail set with weekly seasonality, events and NB noise."""
    spec = spec or HierarchySpec()
    if n_days <= spec.c + 2 * spec.h + spec.h:
        raise ContractError(f"n_days={n_days} too short for c={spec.c}, h={spec.h} and the splits")
    if n_series < 1:
        raise ContractError("n_series must be positive")
    rng = np.random.default_rng(seed)
    cal = _synth_calendar(rng, n_days)

    n_stores = min(4, n_series)
    states = ("CA", "TX")
    stores = [f"{states[s * len(states) // n_stores]}_{s + 1}" for s in range(n_stores)]
    n_items = math.ceil(n_series / n_stores)
    item_cat = np.arange(n_items) % len(_CATS)
    item_dept = (np.arange(n_items) // len(_CATS)) % 2 + 1
    items = [f"{_CATS[c]}_{d}_{i + 1:03d}" for i, (c, d) in enumerate(zip(item_cat, item_dept))]

    pairs = [(s, i) for s in range(n_stores) for i in range(n_items)][:n_series]
    store_idx = np.array([p[0] for p in pairs])
    item_idx = np.array([p[1] for p in pairs])

    item_level = np.exp(rng.normal(0.3, 0.9, n_items))
    store_mult = np.exp(rng.normal(0.0, 0.25, n_stores))
    base_price = np.round(rng.uniform(1.0, 15.0, n_items), 2)
    launch = np.where(rng.random(n_items) < 0.2, rng.integers(0, n_days // 3, n_items), 0)
    profile = 1.0 + rng.uniform(0.1, 0.6, (n_items, 1)) * np.array([[0.9, 0.6, -0.1, -0.3, -0.4, -0.3, -0.2]])

    days = np.arange(n_days)
    wday = cal["wday"].to_numpy() - 1
    event_boost = np.ones(n_days)
    types = np.full(n_days, -1)
    for col in ("event_type_1", "event_type_2"):
        for t, name in enumerate(EVENT_TYPES):
            hit = (cal[col] == name).to_numpy()
            event_boost[hit] *= 1.3 + 0.3 * t
            types[hit] = t
    annual = 1.0 + 0.15 * np.sin(2 * np.pi * days / 365.25)
    trend = 1.0 + 0.0004 * days

    n_weeks = int(cal["wm_yr_wk"].iloc[-1] - cal["wm_yr_wk"].iloc[0]) + 1
    promo = rng.random((n_series, n_weeks)) < 0.05
    price_wk = base_price[item_idx, None] * (1 + rng.normal(0, 0.02, (n_series, 1))) * np.where(promo, 0.8, 1.0)
    price_wk = np.round(price_wk, 2)

    mu = (
        item_level[item_idx, None]
        * store_mult[store_idx, None]
        * profile[item_idx][:, wday]
        * event_boost[None, :]
        * annual[None, :]
        * trend[None, :]
        * np.where(promo[:, days // 7], 1.5, 1.0)
    )
    snap_mat = np.stack([cal[f"snap_{stores[s].split('_')[0]}"].to_numpy() for s in store_idx])
    mu *= np.where((item_cat[item_idx] == 0)[:, None] & (snap_mat == 1), 1.2, 1.0)
    alive = days[None, :] >= launch[item_idx, None]
    mu *= alive
    alpha = 0.3
    lam = rng.gamma(shape=1.0 / alpha, scale=alpha * np.maximum(mu, 1e-12))
    sales = rng.poisson(lam).astype(np.int32) * alive

    price_rows = []
    first_week = launch[item_idx] // 7
    for s in range(n_series):
        for w in range(first_week[s], n_weeks):
            price_rows.append((stores[store_idx[s]], items[item_idx[s]], 11101 + w, price_wk[s, w]))
    prices = pd.DataFrame(price_rows, columns=list(PRICE_COLUMNS))

    labels = {
        "item_id": np.array([items[i] for i in item_idx]),
        "dept_id": np.array([f"{_CATS[item_cat[i]]}_{item_dept[i]}" for i in item_idx]),
        "cat_id": np.array([_CATS[item_cat[i]] for i in item_idx]),
        "store_id": np.array([stores[s] for s in store_idx]),
        "state_id": np.array([stores[s].split("_")[0] for s in store_idx]),
    }
    ids = np.array([f"{it}_{st}_evaluation" for it, st in zip(labels["item_id"], labels["store_id"])])
    return M5Dataset(ids=ids, labels=labels, sales=sales.astype(np.int32), calendar=cal, prices=prices)


# -- features --------------------------------------------------------------


def embedding_dims(r: int) -> int:
    """Embedding width for a categorical of cardinality ``r``; binaries stay 1 channel."""
    if r < 2:
        raise ContractError(f"cardinality must be >= 2, got {r}")
    if r == 2:
        return 1
    return math.ceil(6 * r**0.25)


@dataclass(frozen=True)
class FeatureSchema:
    cardinalities: tuple[int, ...]
    cat_names: tuple[str, ...] = CAT_FEATURES
    cont_names: tuple[str, ...] = CONT_FEATURES

    def is_embedded(self, j: int) -> bool:
        return self.cardinalities[j] > 2

    @property
    def embedded(self) -> list[tuple[int, str, int, int]]:
        """(column, name, cardinality, width) for each embedded categorical."""
        return [
            (j, n, r, embedding_dims(r))
            for j, (n, r) in enumerate(zip(self.cat_names, self.cardinalities))
            if r > 2
        ]

    @property
    def binary(self) -> list[int]:
        return [j for j in range(len(self.cat_names)) if not self.is_embedded(j)]

    @property
    def width(self) -> int:
        return sum(e[3] for e in self.embedded) + len(self.binary) + len(self.cont_names)

    def digest(self) -> str:
        blob = json.dumps(
            {"cat": list(self.cat_names), "card": list(self.cardinalities), "cont": list(self.cont_names)}
        )
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class FeatureBatch:
    """Aligned covariate windows of length c + h for a batch of series."""

    cat: np.ndarray  # (B, c+h, n_cat) int
    cont: np.ndarray  # (B, c+h, n_cont) float
    y_hist: np.ndarray  # (B, c)
    y_future: np.ndarray  # (B, h)
    series: np.ndarray  # (B,)
    scale: np.ndarray  # (B,)
    origin: np.ndarray = field(default=None)  # (B,) days observed before the horizon

    def __len__(self) -> int:
        return self.cat.shape[0]


def _standardize(x: np.ndarray, ref: np.ndarray | None = None):
    ref = x if ref is None else ref
    mu, sd = float(np.mean(ref)), float(np.std(ref))
    return (x - mu) / (sd if sd > 1e-6 * (1.0 + abs(mu)) else 1.0)


class FeatureSet:
    """Per-series feature accessors for one dataset (training statistics only)."""

    def __init__(self, ds: M5Dataset):
        self.ds = ds
        n, T, n_tr = ds.n_series, ds.n_days, ds.n_train
        cal = ds.calendar

        label_map = {
            "item_id": "item_id", "store_id": "store_id", "department_id": "dept_id",
            "category_id": "cat_id", "state_id": "state_id",
        }
        static = []
        card = []
        self.vocab: dict[str, np.ndarray] = {}
        for name in CAT_FEATURES[:N_STATIC_CAT]:
            vocab, codes = np.unique(ds.labels[label_map[name]], return_inverse=True)
            self.vocab[name] = vocab
            static.append(codes)
            card.append(max(len(vocab), 2))
        self.static_codes = np.stack(static, axis=1).astype(np.int64)

        events = [
            ((cal["event_type_1"] == t) | (cal["event_type_2"] == t)).to_numpy().astype(np.int64)
            for t in EVENT_TYPES
        ]
        self.calendar_codes = np.stack(
            [cal["wday"].to_numpy() - 1, cal["month"].to_numpy() - 1, *events], axis=1
        ).astype(np.int64)
        card += [7, 12, 2, 2, 2, 2, 2]
        states = self.vocab["state_id"]
        self.snap = np.stack([cal[f"snap_{s}"].to_numpy() for s in states], axis=1).astype(np.int64)
        self.schema = FeatureSchema(tuple(card))

        train_sales = ds.sales[:, :n_tr].astype(np.float64)
        self.mean_sales = train_sales.mean(axis=1)
        self.scale = 1.0 + self.mean_sales

        wk = ds.weekly_prices
        counts = np.bincount(ds.day_week[:n_tr], minlength=wk.shape[1]).astype(np.float64)
        self.price_mean = wk @ counts / counts.sum()
        var = ((wk - self.price_mean[:, None]) ** 2) @ counts / counts.sum()
        sd = np.sqrt(np.maximum(var, 0.0))
        self.price_sd = np.where(sd > 1e-6 * (1.0 + np.abs(self.price_mean)), sd, 1.0)

        self.static_cont = np.stack(
            [_standardize(self.price_mean), _standardize(self.mean_sales)], axis=1
        )
        year = cal["year"].to_numpy(dtype=np.float64)
        self.year = _standardize(year, year[:n_tr])

    @property
    def n_series(self) -> int:
        return self.ds.n_series

    def sampling_probabilities(self, eps: float = SAMPLER_EPS) -> np.ndarray:
        w = eps + self.mean_sales
        return w / w.sum()

    def window(self, series, origin, spec: HierarchySpec) -> FeatureBatch:
        """Windows covering days [origin - c, origin + h) for each series."""
        series = np.atleast_1d(np.asarray(series, dtype=np.int64))
        origin = np.broadcast_to(np.asarray(origin, dtype=np.int64), series.shape).copy()
        c, h = spec.c, spec.h
        if (origin < c).any() or (origin > self.ds.n_days).any():
            raise ContractError(f"origin out of range for context {c}: {origin.min()}..{origin.max()}")
        B, L = len(series), c + h
        offs = np.arange(-c, h)
        days = origin[:, None] + offs[None, :]
        known = days < self.ds.n_days
        dclip = np.minimum(days, self.ds.n_days - 1)

        cat = np.empty((B, L, len(CAT_FEATURES)), dtype=np.int64)
        cat[:, :, :N_STATIC_CAT] = self.static_codes[series][:, None, :]
        cat[:, :, N_STATIC_CAT:-1] = self.calendar_codes[dclip]
        cat[:, :, -1] = self.snap[dclip, self.static_codes[series, 4][:, None]]

        sales = self.ds.sales[series[:, None], dclip].astype(np.float64)
        scale = self.scale[series]
        cont = np.empty((B, L, len(CONT_FEATURES)))
        cont[:, :, 0:2] = self.static_cont[series][:, None, :]
        cont[:, :, SALES_CHANNEL] = np.where(offs[None, :] < 0, sales / scale[:, None], 0.0)
        price = self.ds.weekly_prices[series[:, None], self.ds.day_week[dclip]]
        cont[:, :, 3] = (price - self.price_mean[series, None]) / self.price_sd[series, None]
        cont[:, :, 4] = self.year[dclip]

        y_future = np.where(known[:, c:], sales[:, c:], np.nan)
        return FeatureBatch(
            cat=cat, cont=cont, y_hist=sales[:, :c], y_future=y_future,
            series=series, scale=scale, origin=origin,
        )

    def sample_windows(self, rng: np.random.Generator, spec: HierarchySpec,
                       batch_size: int = 30, eps: float = SAMPLER_EPS) -> FeatureBatch:
        """Weighted-by-mean-sales series draw, uniform origin inside the training range."""
        n_tr = self.ds.n_train
        if n_tr < spec.c + spec.h:
            raise ContractError(f"training range {n_tr} shorter than c + h = {spec.c + spec.h}")
        series = rng.choice(self.n_series, size=batch_size, p=self.sampling_probabilities(eps))
        origin = rng.integers(spec.c, n_tr - spec.h + 1, size=batch_size)
        return self.window(series, origin, spec)


def build_features(ds: M5Dataset) -> FeatureSet:
    return FeatureSet(ds)
