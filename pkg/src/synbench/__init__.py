"""Benchmark harness for pooled vs. regionalized LSTM training on
hierarchically structured hydrologic time series.

The package generates a synthetic multi-level region world, trains
linear-LSTM-linear regression networks from scratch (exact BPTT), and runs
the two experiment families (one global model vs. per-region local models,
and local models augmented with close / far / dissimilar neighbor data),
with per-site RMSE / correlation / NSE evaluation and Wilcoxon signed-rank
comparison.
"""

__version__ = "0.1.0"

from synbench.regions import (
    NeighborClass,
    RegionCode,
    classify_neighbor,
    parse_region_code,
)

__all__ = [
    "NeighborClass",
    "RegionCode",
    "classify_neighbor",
    "parse_region_code",
    "__version__",
]
