"""Differentially private histogram publication for range-sum queries.

Composable noise-spending modules (smoothing, hierarchy levels, fixed-query
measurement) plus the nine published scheme wirings and an evaluation
harness.  See README.md for the CLI and the acceptance suite.
"""

from .core import (
    BinLabel,
    BudgetExceededError,
    BudgetLedger,
    ConfigurationError,
    Histogram,
    NoisyHistogram,
    RangeQuery,
    prefix_sums,
    range_sum,
    read_histogram_csv,
    write_histogram_csv,
)
from .noise import INFINITE, NoiseSource, derive_seed, lpa, sample_laplace

__version__ = "0.1.0"

__all__ = [
    "BinLabel",
    "BudgetExceededError",
    "BudgetLedger",
    "ConfigurationError",
    "Histogram",
    "NoisyHistogram",
    "RangeQuery",
    "prefix_sums",
    "range_sum",
    "read_histogram_csv",
    "write_histogram_csv",
    "INFINITE",
    "NoiseSource",
    "derive_seed",
    "lpa",
    "sample_laplace",
    "__version__",
]
