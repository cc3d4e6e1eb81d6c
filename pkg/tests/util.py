"""Shared test fixtures: tiny hand-built datasets and independent oracles."""

import datetime as dt
import math

import numpy as np

from synbench.data import Dataset, Site
from synbench.regions import parse_region_code


def make_site(site_id, region, attrs, forcing, target):
    return Site(
        site_id=site_id,
        region=parse_region_code(region),
        static_attrs=np.asarray(attrs, dtype=np.float64),
        forcing=np.asarray(forcing, dtype=np.float64),
        target=np.asarray(target, dtype=np.float64),
    )


def make_dataset(site_specs, n_days=4, feature_names=("f_1", "f_2"), attr_names=("a_1",)):
    """Build a small dataset; site_specs is a list of (site_id, region) or
    (site_id, region, target_row) tuples. Forcing is deterministic filler.
    """
    start = dt.date(2020, 1, 1)
    time_axis = tuple(start + dt.timedelta(days=i) for i in range(n_days))
    sites = []
    for i, spec in enumerate(site_specs):
        site_id, region = spec[0], spec[1]
        target = spec[2] if len(spec) > 2 else np.arange(n_days, dtype=float) + i
        forcing = np.stack(
            [np.linspace(0, 1, n_days) + i, np.linspace(1, 2, n_days) * (i + 1)],
            axis=1,
        )[:, : len(feature_names)]
        sites.append(make_site(site_id, region, [float(i)] * len(attr_names), forcing, target))
    return Dataset(tuple(sites), time_axis, feature_names, attr_names)


# ---------------------------------------------------------------------------
# Independent oracles for the network gradient and forward recursion.
# These deliberately avoid the package's vectorized code paths.


def oracle_forward_single(params, x):
    """Step-by-step scalar-friendly evaluation of the gate equations for one
    window (L, D). Independent of the batched implementation."""

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    H = params.w_in.shape[0]
    h = np.zeros(H)
    c = np.zeros(H)
    ys = []
    for t in range(x.shape[0]):
        a = np.maximum(params.w_in @ x[t] + params.b_in, 0.0)
        gi = sig(params.w_i @ a + params.u_i @ h + params.b_i)
        gf = sig(params.w_f @ a + params.u_f @ h + params.b_f)
        go = sig(params.w_o @ a + params.u_o @ h + params.b_o)
        gg = np.tanh(params.w_g @ a + params.u_g @ h + params.b_g)
        c = gf * c + gi * gg
        h = go * np.tanh(c)
        ys.append(float((params.w_out @ h + params.b_out)[0]))
    return np.array(ys)


def finite_diff_grads(loss_fn, params, step=1e-5):
    """Central-difference gradients of loss_fn(params) for every entry of
    every parameter array. loss_fn must not mutate params."""
    from synbench.lstm import ModelParams

    grads = {}
    for name, arr in params.arrays():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_fn(params)
            flat[idx] = orig - step
            down = loss_fn(params)
            flat[idx] = orig
            gflat[idx] = (up - down) / (2.0 * step)
        grads[name] = g
    return ModelParams(**grads)


def max_relative_grad_error(analytic, numeric, floor=1e-6):
    """Max over all entries of |a - n| / max(|a| + |n|, floor)."""
    worst = 0.0
    for (name, a), (_, n) in zip(analytic.arrays(), numeric.arrays()):
        denom = np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


# ---------------------------------------------------------------------------
# Brute-force metric and signed-rank oracles (naive loops; no shared code
# with the package implementations).


def brute_rmse(obs, pred):
    total, count = 0.0, 0
    for o, p in zip(obs, pred):
        if math.isfinite(o):
            total += (p - o) ** 2
            count += 1
    return math.sqrt(total / count) if count else float("nan")


def brute_corr(obs, pred):
    pairs = [(o, p) for o, p in zip(obs, pred) if math.isfinite(o)]
    if len(pairs) < 2:
        return float("nan")
    mo = sum(o for o, _ in pairs) / len(pairs)
    mp = sum(p for _, p in pairs) / len(pairs)
    num = sum((o - mo) * (p - mp) for o, p in pairs)
    do = math.sqrt(sum((o - mo) ** 2 for o, _ in pairs))
    dp = math.sqrt(sum((p - mp) ** 2 for _, p in pairs))
    if do == 0.0 or dp == 0.0:
        return float("nan")
    return num / (do * dp)


def brute_nse(obs, pred):
    pairs = [(o, p) for o, p in zip(obs, pred) if math.isfinite(o)]
    if len(pairs) < 2:
        return float("nan")
    mo = sum(o for o, _ in pairs) / len(pairs)
    den = sum((o - mo) ** 2 for o, _ in pairs)
    if den == 0.0:
        return float("nan")
    return 1.0 - sum((o - p) ** 2 for o, p in pairs) / den


def wilcoxon_enumerate(a, b):
    """Two-sided signed-rank p by literally enumerating all 2^n sign
    assignments over the observed ranks. Usable for n <= ~14."""
    import scipy.stats

    diffs = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return 1.0
    ranks = scipy.stats.rankdata(np.abs(diffs))
    w_obs = min(float(ranks[diffs > 0].sum()), float(ranks[diffs < 0].sum()))
    tail = 0
    for bits in range(2**n):
        w_plus = sum(ranks[i] for i in range(n) if bits >> i & 1)
        if w_plus <= w_obs:
            tail += 1
    return min(1.0, 2.0 * tail / 2**n)
