"""Two-level temporal hierarchy: bin averages, upsampling, centering, readout."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class HierarchySpec:
    """Context length ``c``, horizon ``h``, bin width ``w`` and bin count ``k``."""

    c: int = 35
    h: int = 28
    w: int = 7
    k: int = 4

    def __post_init__(self):
        for name in ("c", "h", "w", "k"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ContractError(f"{name} must be a positive integer, got {v!r}")
        if self.h != self.w * self.k:
            raise ContractError(f"horizon {self.h} != bin width {self.w} * bin count {self.k}")

    @classmethod
    def from_bins(cls, w: int, k: int, c: int | None = None) -> "HierarchySpec":
        return cls(c=w * k if c is None else c, h=w * k, w=w, k=k)

    @property
    def window(self) -> int:
        return self.c + self.h


@lru_cache(maxsize=128)
def _summation(w: int, k: int) -> np.ndarray:
    S = np.zeros((w * k, k))
    for j in range(k):
        S[j * w : (j + 1) * w, j] = 1.0
    S.setflags(write=False)
    return S


def build_summation_matrix(spec: HierarchySpec) -> np.ndarray:
    """The h x k 0/1 matrix with ``S[i, j] = 1`` iff row ``i`` lies in bin ``j``."""
    return _summation(spec.w, spec.k)


def _check_last(x, n: int, what: str):
    if x.shape[-1] != n:
        raise DimensionError(f"{what}: last axis has length {x.shape[-1]}, expected {n}")


def upsample(a, spec: HierarchySpec):
    """Repeat each of the k bin levels w times (``S @ a`` over the last axis)."""
    _check_last(a, spec.k, "upsample")
    S = build_summation_matrix(spec)
    if isinstance(a, ad.Tensor):
        if a.ndim == 1:
            return ad.reshape(ad.matmul(ad.reshape(a, (1, spec.k)), S.T), (spec.h,))
        return ad.matmul(a, S.T)
    return np.asarray(a, dtype=np.float64) @ S.T


def bin_average(y, spec: HierarchySpec):
    """Non-overlapping means over k bins of width w (last axis)."""
    _check_last(y, spec.h, "bin_average")
    if isinstance(y, ad.Tensor):
        lead = y.shape[:-1]
        return ad.mean(ad.reshape(y, lead + (spec.k, spec.w)), axis=-1)
    y = np.asarray(y, dtype=np.float64)
    return y.reshape(y.shape[:-1] + (spec.k, spec.w)).mean(axis=-1)


def center_deviations(d_raw, spec: HierarchySpec):
    """Subtract each bin's mean so deviations sum to zero within every bin."""
    _check_last(d_raw, spec.h, "center_deviations")
    if isinstance(d_raw, ad.Tensor):
        return ad.sub(d_raw, upsample(bin_average(d_raw, spec), spec))
    d_raw = np.asarray(d_raw, dtype=np.float64)
    return d_raw - upsample(bin_average(d_raw, spec), spec)


def readout(avg, dev, spec: HierarchySpec):
    """Fine forecast ``S @ avg + dev``; no trainable parameters."""
    _check_last(avg, spec.k, "readout avg")
    _check_last(dev, spec.h, "readout dev")
    if avg.shape[:-1] != dev.shape[:-1]:
        raise DimensionError(
            f"readout: batch axes differ, avg {avg.shape[:-1]} vs dev {dev.shape[:-1]}"
        )
    if isinstance(avg, ad.Tensor) or isinstance(dev, ad.Tensor):
        return ad.add(upsample(ad.as_tensor(avg), spec), dev)
    return upsample(avg, spec) + np.asarray(dev, dtype=np.float64)
