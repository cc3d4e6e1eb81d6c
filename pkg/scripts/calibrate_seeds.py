"""Pre-flight check of the two directional acceptance criteria over 5 seeds."""

import datetime as dt
import tempfile
import time

import numpy as np

from synbench.experiments import plan_global_local, plan_similar_dissimilar, run_suite
from synbench.regions import parse_region_code, taxonomy_from_codes
from synbench.training import TrainConfig
from synbench.worldgen import WorldConfig, gen_world

WINDOWS = (dt.date(2000, 1, 1), dt.date(2001, 1, 1), dt.date(2001, 1, 1), dt.date(2001, 12, 31))
ROIS = ["S1.1.1", "S3.2.2"]


def seed_run_global_local(seed):
    ds, _ = gen_world(WorldConfig(seed=seed))
    tax = taxonomy_from_codes([s.region for s in ds.sites], level=2)
    tc = TrainConfig(window_len=30, batch_size=100, epochs=100, seed=seed)
    specs = plan_global_local(ds, tax, tc, 32, WINDOWS, seed)
    with tempfile.TemporaryDirectory() as out:
        results, comparisons = run_suite(ds, specs, out, taxonomy=tax, metrics=("rmse",), workers=2)
    pooled = [c for c in comparisons if c.region == "All" and c.metric == "rmse"][0]
    return pooled


def seed_run_similar(seed):
    ds, _ = gen_world(WorldConfig(seed=seed))
    rois = [parse_region_code(r) for r in ROIS]
    tc = TrainConfig(window_len=30, batch_size=100, epochs=100, seed=seed)
    specs = plan_similar_dissimilar(ds, rois, False, tc, 32, WINDOWS, seed)
    with tempfile.TemporaryDirectory() as out:
        results, comparisons = run_suite(ds, specs, out, metrics=("rmse",), workers=2)
    rows = {}
    for r in results:
        vals = [m.rmse for _, _, m in r.metrics_rows]
        rows[r.model_id] = float(np.median(vals))
    return rows


def main():
    print("=== global vs local, 5 seeds ===", flush=True)
    for seed in range(1, 6):
        t0 = time.perf_counter()
        pooled = seed_run_global_local(seed)
        ok_median = pooled.median_a < pooled.median_b
        print(
            f"seed {seed}: global={pooled.median_a:.4f} local={pooled.median_b:.4f} "
            f"p={pooled.p_value:.2e} pct={pooled.pct_better:.0f}% "
            f"median_ok={ok_median} ({(time.perf_counter()-t0)/60:.1f} min)",
            flush=True,
        )
    print("=== similar vs dissimilar, 5 seeds ===", flush=True)
    for seed in range(1, 6):
        t0 = time.perf_counter()
        rows = seed_run_similar(seed)
        oks = []
        for roi in ROIS:
            local = rows[f"{roi}:local"]
            dis = rows[f"{roi}:local_dissimilar"]
            oks.append(dis <= local)
            print(f"seed {seed} roi {roi}: local={local:.4f} dissimilar={dis:.4f} ok={dis <= local}", flush=True)
        print(f"seed {seed}: all rois ok={all(oks)} ({(time.perf_counter()-t0)/60:.1f} min)", flush=True)


if __name__ == "__main__":
    main()
