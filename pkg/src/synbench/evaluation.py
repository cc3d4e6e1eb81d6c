"""Per-site metrics, Wilcoxon signed-rank testing, and paired model comparison.

Metrics are computed over observed target positions only and return NaN
when undefined (too few observations or a constant series); paired
comparisons drop such sites and report how many were excluded.  The
signed-rank test drops zero differences, uses average ranks for ties,
and is exact up to n = 25 (the full sign-assignment distribution,
computed by convolution); beyond that it switches to the normal
approximation with tie-corrected variance and continuity correction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EXACT_LIMIT = 25

METRIC_NAMES = ("rmse", "corr", "nse")
#: Metrics where smaller values are better.
LOWER_IS_BETTER = frozenset({"rmse"})


class EvaluationError(ValueError):
    """Unusable inputs for a metric or comparison."""


def rmse(obs: np.ndarray, pred: np.ndarray) -> float:
    """Root-mean-square error over observed positions; NaN if none."""
    obs = np.asarray(obs, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    mask = np.isfinite(obs)
    if not mask.any():
        return float("nan")
    err = pred[mask] - obs[mask]
    return float(np.sqrt(np.mean(err * err)))


def pearson_corr(obs: np.ndarray, pred: np.ndarray) -> float:
    """Product-moment correlation over observed positions.

    NaN with fewer than two observations or when either series is
    constant on the observed positions.
    """
    obs = np.asarray(obs, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    mask = np.isfinite(obs)
    if mask.sum() < 2:
        return float("nan")
    o = obs[mask] - obs[mask].mean()
    p = pred[mask] - pred[mask].mean()
    so = float(np.sqrt((o * o).sum()))
    sp = float(np.sqrt((p * p).sum()))
    if so == 0.0 or sp == 0.0:
        return float("nan")
    return float((o * p).sum() / (so * sp))


def nse(obs: np.ndarray, pred: np.ndarray) -> float:
    """Nash-Sutcliffe efficiency: 1 - SSE / observed variance sum.

    NaN with fewer than two observations or constant observations.
    """
    obs = np.asarray(obs, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    mask = np.isfinite(obs)
    if mask.sum() < 2:
        return float("nan")
    o = obs[mask]
    p = pred[mask]
    denom = float(((o - o.mean()) ** 2).sum())
    if denom == 0.0:
        return float("nan")
    return float(1.0 - ((o - p) ** 2).sum() / denom)


@dataclass(frozen=True)
class SiteMetrics:
    site_id: str
    rmse: float
    corr: float
    nse: float
    n_obs: int

    def value(self, metric: str) -> float:
        if metric not in METRIC_NAMES:
            raise EvaluationError(f"unknown metric {metric!r}")
        return getattr(self, metric)


def site_metrics(site_id: str, obs: np.ndarray, pred: np.ndarray) -> SiteMetrics:
    """All three metrics for one site's test series."""
    return SiteMetrics(
        site_id=site_id,
        rmse=rmse(obs, pred),
        corr=pearson_corr(obs, pred),
        nse=nse(obs, pred),
        n_obs=int(np.isfinite(np.asarray(obs, dtype=np.float64)).sum()),
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values receiving their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    n_effective: int   # pairs remaining after zero differences are dropped
    statistic: float   # W = min(W+, W-)
    method: str        # "exact", "normal", or "degenerate"
    degenerate: bool

    def as_tuple(self) -> tuple[float, int]:
        return (self.p_value, self.n_effective)


def _exact_sign_distribution(double_ranks: np.ndarray) -> np.ndarray:
    """Counts of sign assignments by doubled positive-rank sum.

    Equivalent to enumerating all 2^n sign patterns: the returned array
    has counts[s] = number of patterns whose doubled W+ equals s.
    """
    total = int(double_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in double_ranks:
        r = int(r)
        counts[r:] = counts[r:] + counts[:-r]
    return counts


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def wilcoxon_signed_rank(
    a: Sequence[float], b: Sequence[float], exact_limit: int = EXACT_LIMIT
) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired values.

    Zero differences are dropped; |differences| are ranked with average
    ranks for ties.  If every difference is zero the test is degenerate
    and reported as p = 1 with a flag.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError("inputs must be 1-D arrays of equal length")
    diffs = a - b
    if not np.isfinite(diffs).all():
        raise EvaluationError("paired values must be finite")
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return WilcoxonResult(1.0, 0, 0.0, "degenerate", True)
    ranks = _average_ranks(np.abs(diffs))
    w_pos = float(ranks[diffs > 0].sum())
    w_neg = float(ranks[diffs < 0].sum())
    w = min(w_pos, w_neg)

    if n <= exact_limit:
        double_ranks = np.rint(2.0 * ranks).astype(np.int64)
        counts = _exact_sign_distribution(double_ranks)
        w2 = int(round(2.0 * w))
        tail = int(counts[: w2 + 1].sum())
        p = min(1.0, 2.0 * tail / float(2**n))
        return WilcoxonResult(p, n, w, "exact", False)

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    var -= float((tie_counts**3 - tie_counts).sum()) / 48.0
    if var <= 0:
        # all |differences| identical and n large: fall back to binomial-like
        # degenerate variance; treat as maximally tied normal case
        return WilcoxonResult(1.0, n, w, "degenerate", True)
    z = (w - mean + 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * _normal_cdf(z))
    return WilcoxonResult(p, n, w, "normal", False)


@dataclass
class PairedComparison:
    """Per-site paired comparison of two models on one metric."""

    metric: str
    model_a: str
    model_b: str
    region: str
    site_ids: tuple[str, ...]
    values_a: np.ndarray
    values_b: np.ndarray
    p_value: float
    median_a: float
    median_b: float
    pct_better: float        # percent of sites where model_a is strictly better
    n: int                   # pairs compared
    n_excluded: int          # sites dropped for undefined metrics
    degenerate: bool


def _build_comparison(
    metric: str,
    model_a: str,
    model_b: str,
    region: str,
    site_ids: Sequence[str],
    va: np.ndarray,
    vb: np.ndarray,
    n_excluded: int,
) -> PairedComparison:
    better = va < vb if metric in LOWER_IS_BETTER else va > vb
    result = wilcoxon_signed_rank(va, vb)
    return PairedComparison(
        metric=metric,
        model_a=model_a,
        model_b=model_b,
        region=region,
        site_ids=tuple(site_ids),
        values_a=va,
        values_b=vb,
        p_value=result.p_value,
        median_a=float(np.median(va)),
        median_b=float(np.median(vb)),
        pct_better=100.0 * float(better.sum()) / len(site_ids),
        n=len(site_ids),
        n_excluded=n_excluded,
        degenerate=result.degenerate,
    )


def compare_models(
    metrics_a: Sequence[SiteMetrics],
    metrics_b: Sequence[SiteMetrics],
    metric: str,
    model_a: str = "a",
    model_b: str = "b",
    region: str = "",
) -> PairedComparison:
    """Pair two models' per-site metrics by site id and test the difference.

    Sites with an undefined metric in either model are excluded (and
    counted); an empty usable intersection is an error.
    """
    if metric not in METRIC_NAMES:
        raise EvaluationError(f"unknown metric {metric!r}")
    by_a = {m.site_id: m.value(metric) for m in metrics_a}
    by_b = {m.site_id: m.value(metric) for m in metrics_b}
    common = sorted(set(by_a) & set(by_b))
    if not common:
        raise EvaluationError(
            f"models {model_a!r} and {model_b!r} share no evaluated sites"
        )
    kept = [s for s in common if math.isfinite(by_a[s]) and math.isfinite(by_b[s])]
    n_excluded = len(common) - len(kept)
    if not kept:
        raise EvaluationError(
            f"no common site has a defined {metric} in both models "
            f"({n_excluded} excluded)"
        )
    va = np.array([by_a[s] for s in kept])
    vb = np.array([by_b[s] for s in kept])
    return _build_comparison(metric, model_a, model_b, region, kept, va, vb, n_excluded)


def pool_comparisons(
    per_region: Sequence[PairedComparison],
    region_label: str = "All",
    model_a: str | None = None,
    model_b: str | None = None,
) -> PairedComparison:
    """Concatenate per-region pairs into one pooled comparison row.

    Model labels may be overridden for the pooled row (the per-region
    names often carry region-specific prefixes).
    """
    if not per_region:
        raise EvaluationError("nothing to pool")
    first = per_region[0]
    if any(c.metric != first.metric for c in per_region):
        raise EvaluationError("pooled comparisons must share a metric")
    site_ids = [s for c in per_region for s in c.site_ids]
    if len(set(site_ids)) != len(site_ids):
        raise EvaluationError("pooled regions must not share sites")
    va = np.concatenate([c.values_a for c in per_region])
    vb = np.concatenate([c.values_b for c in per_region])
    n_excluded = sum(c.n_excluded for c in per_region)
    return _build_comparison(
        first.metric,
        model_a if model_a is not None else first.model_a,
        model_b if model_b is not None else first.model_b,
        region_label,
        site_ids,
        va,
        vb,
        n_excluded,
    )


# ---------------------------------------------------------------------------
# CSV renderings (schema shared with the experiment runner and reports)

METRICS_HEADER = ["site_id", "region", "model_id", "rmse", "corr", "nse", "n_obs"]
COMPARISONS_HEADER = [
    "region",
    "metric",
    "model_a",
    "model_b",
    "p_value",
    "median_a",
    "median_b",
    "pct_better",
    "n",
]


def _cell(value: float) -> str:
    return "NA" if not math.isfinite(value) else repr(float(value))


def metrics_to_csv(rows: Sequence[tuple[str, str, SiteMetrics]]) -> str:
    """Render (region_label, model_id, SiteMetrics) rows to the metrics CSV."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for region, model_id, m in rows:
        writer.writerow(
            [m.site_id, region, model_id, _cell(m.rmse), _cell(m.corr), _cell(m.nse), m.n_obs]
        )
    return buf.getvalue()


def parse_metrics_csv(text: str) -> list[tuple[str, str, SiteMetrics]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != METRICS_HEADER:
        raise EvaluationError(f"unexpected metrics header: {header}")
    rows = []
    for row in reader:
        site_id, region, model_id = row[0], row[1], row[2]
        vals = [float("nan") if v == "NA" else float(v) for v in row[3:6]]
        rows.append(
            (region, model_id, SiteMetrics(site_id, vals[0], vals[1], vals[2], int(row[6])))
        )
    return rows


def comparisons_to_csv(comparisons: Sequence[PairedComparison]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARISONS_HEADER)
    for c in comparisons:
        writer.writerow(
            [
                c.region,
                c.metric,
                c.model_a,
                c.model_b,
                _cell(c.p_value),
                _cell(c.median_a),
                _cell(c.median_b),
                _cell(c.pct_better),
                c.n,
            ]
        )
    return buf.getvalue()
