"""Naive context-window-average forecaster."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .hierarchy import HierarchySpec
from .model import ForecastPair


def ctx_wind_avg(y_context, spec: HierarchySpec) -> ForecastPair:
    """Forecast the mean of the last ``c`` observations at every fine and coarse step."""
    y = np.asarray(y_context, dtype=np.float64)
    if y.shape[-1] != spec.c:
        raise DimensionError(f"context has length {y.shape[-1]}, expected c={spec.c}")
    level = y.mean(axis=-1, keepdims=True)
    lead = y.shape[:-1]
    return ForecastPair(
        fine=np.broadcast_to(level, lead + (spec.h,)).copy(),
        coarse=np.broadcast_to(level, lead + (spec.k,)).copy(),
    )


def ctx_wind_avg_dataset(ds, origin: int, spec: HierarchySpec) -> tuple[np.ndarray, np.ndarray]:
    """Fine and coarse baseline forecasts for every series of ``ds`` at ``origin``."""
    pair = ctx_wind_avg(ds.sales[:, origin - spec.c:origin], spec)
    return pair.fine, pair.coarse
