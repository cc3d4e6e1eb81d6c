"""Command-line entry point.

Subcommands: gen-world, train, eval, run-suite, report.  All state comes
from flags and the config file; exit codes are 0 for success, 1 for
configuration or validation errors, 2 for runtime numeric failures, and
3 when only part of a suite failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from synbench import __version__
from synbench.config import Config, ConfigError, load_config
from synbench.data import (
    DataError,
    apply_normalization,
    fit_normalization,
    load_dataset,
    save_dataset,
    slice_time,
)
from synbench.evaluation import EvaluationError, metrics_to_csv, site_metrics
from synbench.experiments import (
    ExperimentError,
    eligible_rois,
    plan_global_local,
    plan_similar_dissimilar,
    predict,
    run_suite,
)
from synbench.lstm import NetworkDims, NumericError, load_checkpoint, save_checkpoint
from synbench.regions import (
    EPA_SUBREGIONS,
    RegionError,
    load_taxonomy,
    parse_region_code,
    taxonomy_from_codes,
)
from synbench.report import ReportError, render_text_table, write_report
from synbench.training import TrainError, train
from synbench.worldgen import WorldError, gen_world, save_latent_truth

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_PARTIAL = 3


def _experiment_windows(cfg: Config):
    exp = cfg.require("experiment")
    return (exp.train_start, exp.train_end, exp.test_start, exp.test_end)


def _resolve_taxonomy(cfg: Config, ds):
    exp = cfg.require("experiment")
    if exp.taxonomy == "builtin":
        return EPA_SUBREGIONS
    if exp.taxonomy in ("level1", "level2"):
        level = 1 if exp.taxonomy == "level1" else 2
        return taxonomy_from_codes([s.region for s in ds.sites], level=level)
    return load_taxonomy(exp.taxonomy)


def cmd_gen_world(args) -> int:
    cfg = load_config(args.config, args.seed_override)
    world_cfg = cfg.require("world")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, latents = gen_world(world_cfg)
    save_dataset(ds, out)
    save_latent_truth(latents, out / "latent_truth.csv")
    print(f"wrote {ds.n_sites} sites x {ds.n_days} days to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed_override)
    train_cfg = cfg.require("train")
    windows = _experiment_windows(cfg)
    ds = load_dataset(args.data)
    train_ds = slice_time(ds, windows[0], windows[1])
    stats = fit_normalization(train_ds)
    normed = apply_normalization(train_ds, stats)
    dims = NetworkDims(len(ds.feature_names) + len(ds.attr_names), cfg.hidden_size)
    params, log = train(normed, dims, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "checkpoint.bin")
    log.save(out / "train_log.csv")
    print(
        f"trained on {train_ds.n_sites} sites for {train_cfg.epochs} epochs; "
        f"final loss {log.final_loss:.4f}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.seed_override)
    windows = _experiment_windows(cfg)
    ds = load_dataset(args.data)
    params = load_checkpoint(args.checkpoint)
    stats = fit_normalization(slice_time(ds, windows[0], windows[1]))
    test_ds = slice_time(ds, windows[2], windows[3])
    preds = predict(params, test_ds, stats)
    rows = []
    for i, site in enumerate(test_ds.sites):
        rows.append(
            (str(site.region), "checkpoint", site_metrics(site.site_id, site.target, preds[i]))
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_to_csv(rows))
    print(f"evaluated {len(rows)} sites over [{windows[2]}, {windows[3]})")
    return EXIT_OK


def cmd_run_suite(args) -> int:
    cfg = load_config(args.config, args.seed_override)
    exp = cfg.require("experiment")
    train_cfg = cfg.require("train")
    ds = load_dataset(args.data)
    windows = _experiment_windows(cfg)
    workers = args.workers if args.workers is not None else cfg.workers

    if exp.family == "global_local":
        taxonomy = _resolve_taxonomy(cfg, ds)
        specs = plan_global_local(
            ds, taxonomy, train_cfg, cfg.hidden_size, windows, exp.data_seed
        )
    else:
        taxonomy = None
        if exp.rois:
            rois = [parse_region_code(r) for r in exp.rois]
        else:
            rois = eligible_rois(ds, exp.min_roi_sites)
            if not rois:
                raise ConfigError(
                    f"no region of interest has >= {exp.min_roi_sites} sites; "
                    "set experiment.rois or lower experiment.min_roi_sites"
                )
        specs = plan_similar_dissimilar(
            ds, rois, exp.size_controlled, train_cfg, cfg.hidden_size, windows, exp.data_seed
        )

    results, comparisons = run_suite(
        ds,
        specs,
        args.out,
        taxonomy=taxonomy,
        metrics=cfg.metrics,
        workers=workers,
    )
    n_failed = sum(1 for r in results if not r.ok)
    for result in results:
        status = "ok" if result.ok else f"FAILED ({result.manifest['error']})"
        print(f"run {result.run_id}  {result.model_id}: {status}")
    if comparisons:
        rows = []
        for c in comparisons:
            rows.append(
                {
                    "region": c.region,
                    "metric": c.metric,
                    "model_a": c.model_a,
                    "model_b": c.model_b,
                    "p_value": repr(c.p_value),
                    "median_a": repr(c.median_a),
                    "median_b": repr(c.median_b),
                    "pct_better": repr(c.pct_better),
                    "n": str(c.n),
                }
            )
        print()
        print(render_text_table(rows), end="")
    if n_failed == len(results):
        return EXIT_NUMERIC
    if n_failed:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(args) -> int:
    written = write_report(args.runs, args.out)
    print((written["report_txt"]).read_text(), end="")
    print(f"report written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synbench",
        description="Pooled vs. regionalized LSTM benchmark on synthetic hydrologic worlds",
    )
    parser.add_argument("--version", action="version", version=f"synbench {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="configuration file path")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument(
        "--seed-override", type=int, default=None, help="replace every configured seed"
    )
    common.add_argument(
        "--workers", type=int, default=None, help="parallel runs (default: io.workers)"
    )

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", parents=[common], help="generate a synthetic world")
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train", parents=[common], help="train one model on a data directory")
    p.add_argument("--data", required=True, help="directory with sites/forcing/target CSVs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run-suite", parents=[common], help="run an experiment family")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_run_suite)

    p = sub.add_parser("report", help="merge run artifacts into tables")
    p.add_argument("--runs", required=True, help="suite output directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        ConfigError,
        DataError,
        RegionError,
        WorldError,
        TrainError,
        ExperimentError,
        EvaluationError,
        ReportError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
