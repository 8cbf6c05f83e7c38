"""Coherent daily/weekly forecasting with an encoder-decoder temporal hierarchy.

The encoder forecasts weekly (bin) levels, the decoder forecasts zero-mean
daily deviations inside each bin, and the readout adds them, so the bin
averages of the daily forecast equal the weekly forecast by construction.
"""

from .errors import (
    ContractError,
    DataError,
    DimensionError,
    DomainError,
    TempohierError,
    TrainingError,
)
from .hierarchy import HierarchySpec, bin_average, build_summation_matrix, center_deviations, readout, upsample

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DataError",
    "DimensionError",
    "DomainError",
    "HierarchySpec",
    "TempohierError",
    "TrainingError",
    "bin_average",
    "build_summation_matrix",
    "center_deviations",
    "readout",
    "upsample",
    "__version__",
]
