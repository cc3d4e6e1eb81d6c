"""Experiment construction and execution.

Two experiment families: one pooled model against per-letter local models
(every model judged on the same per-letter test sites), and per-ROI
training compositions that add close, far, or dissimilar neighbor data to
a local baseline, optionally resampled so each augmented composition adds
the same number of sites.  Each run is declaratively described by an
ExperimentSpec whose manifest fully determines reproduction.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from synbench import __version__
from synbench.data import (
    Dataset,
    NormStats,
    apply_normalization,
    denormalize_target,
    fit_normalization,
    slice_time,
    subset_by_ids,
    subset_by_region,
)
from synbench.evaluation import (
    PairedComparison,
    SiteMetrics,
    compare_models,
    comparisons_to_csv,
    metrics_to_csv,
    pool_comparisons,
    site_metrics,
)
from synbench.lstm import NetworkDims, dumps_checkpoint, forward
from synbench.regions import (
    NeighborClass,
    RegionCode,
    SubRegion,
    Taxonomy,
    classify_neighbor,
    parse_region_code,
)
from synbench.training import TrainConfig, train

FAMILY_GLOBAL_LOCAL = "global_local"
FAMILY_SIMILAR_DISSIMILAR = "similar_dissimilar"

SCENARIO_GLOBAL = "global"
SCENARIO_LOCAL = "local"
SCENARIO_LOCAL_CLOSE = "local_close"
SCENARIO_LOCAL_FAR = "local_far"
SCENARIO_LOCAL_DISSIMILAR = "local_dissimilar"

#: Augmented compositions, in the fixed order used for size control.
AUGMENTED_SCENARIOS = (SCENARIO_LOCAL_CLOSE, SCENARIO_LOCAL_FAR, SCENARIO_LOCAL_DISSIMILAR)

#: Paired columns reported for the similar-vs-dissimilar family.
SCENARIO_PAIRS = (
    (SCENARIO_LOCAL, SCENARIO_LOCAL_CLOSE),
    (SCENARIO_LOCAL_CLOSE, SCENARIO_LOCAL_FAR),
    (SCENARIO_LOCAL_FAR, SCENARIO_LOCAL_DISSIMILAR),
    (SCENARIO_LOCAL_CLOSE, SCENARIO_LOCAL_DISSIMILAR),
)


class ExperimentError(ValueError):
    """Inconsistent experiment specification or unusable composition."""


def stable_seed(base: int, *tokens) -> int:
    """Deterministic 63-bit seed derived from a base seed and labels."""
    text = "|".join([str(base), *map(str, tokens)])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative description of one model training run."""

    family: str
    scenario: str
    roi: str | None
    size_controlled: bool
    train_start: dt.date
    train_end: dt.date
    test_start: dt.date
    test_end: dt.date
    train: TrainConfig
    hidden_size: int
    data_seed: int

    def __post_init__(self) -> None:
        if self.family == FAMILY_GLOBAL_LOCAL:
            if self.scenario not in (SCENARIO_GLOBAL, SCENARIO_LOCAL):
                raise ExperimentError(
                    f"scenario {self.scenario!r} invalid for the global/local family"
                )
            if self.scenario == SCENARIO_LOCAL and not self.roi:
                raise ExperimentError("local scenario requires a sub-region letter roi")
            if self.size_controlled:
                raise ExperimentError("size control applies only to similar/dissimilar")
        elif self.family == FAMILY_SIMILAR_DISSIMILAR:
            if self.scenario == SCENARIO_GLOBAL:
                raise ExperimentError(
                    "global scenario invalid for the similar/dissimilar family"
                )
            if not self.roi:
                raise ExperimentError("similar/dissimilar runs require a level-III roi")
        else:
            raise ExperimentError(f"unknown family {self.family!r}")
        if not self.train_start < self.train_end <= self.test_start < self.test_end:
            raise ExperimentError(
                "windows must satisfy train_start < train_end <= test_start < test_end"
            )
        if self.hidden_size < 1:
            raise ExperimentError("hidden_size must be >= 1")

    @property
    def model_id(self) -> str:
        if self.scenario == SCENARIO_GLOBAL:
            return "global"
        if self.family == FAMILY_GLOBAL_LOCAL:
            return f"local:{self.roi}"
        suffix = "+sc" if self.size_controlled else ""
        return f"{self.roi}:{self.scenario}{suffix}"

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("train_start", "train_end", "test_start", "test_end"):
            out[key] = out[key].isoformat()
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentSpec":
        data = dict(data)
        for key in ("train_start", "train_end", "test_start", "test_end"):
            data[key] = dt.date.fromisoformat(data[key])
        data["train"] = TrainConfig(**data["train"])
        return cls(**data)

    @property
    def run_id(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Training-composition construction


def build_global_local(ds: Dataset, taxonomy: Taxonomy) -> dict[str, Dataset]:
    """One pooled dataset plus one per-letter dataset; empty letters omitted."""
    by_letter: dict[str, list[str]] = {}
    for site in ds.sites:
        letter = taxonomy.subregion_of(site.region).letter
        by_letter.setdefault(letter, []).append(site.site_id)
    out: dict[str, Dataset] = {"global": ds}
    for letter in taxonomy.letters:
        ids = by_letter.get(letter)
        if ids:
            out[f"local:{letter}"] = subset_by_ids(ds, ids)
    return out


def build_similar_dissimilar(ds: Dataset, roi: RegionCode) -> dict[str, Dataset]:
    """The four training compositions around one level-III region of interest."""
    wanted = {
        SCENARIO_LOCAL: (NeighborClass.SELF,),
        SCENARIO_LOCAL_CLOSE: (NeighborClass.SELF, NeighborClass.CLOSE),
        SCENARIO_LOCAL_FAR: (NeighborClass.SELF, NeighborClass.FAR),
        SCENARIO_LOCAL_DISSIMILAR: (NeighborClass.SELF, NeighborClass.DISSIMILAR),
    }
    out = {
        name: subset_by_region(
            ds, lambda r, cs=classes: classify_neighbor(roi, r) in cs
        )
        for name, classes in wanted.items()
    }
    if out[SCENARIO_LOCAL].n_sites == 0:
        raise ExperimentError(f"region of interest {roi} has no sites")
    return out


def apply_size_control(
    scenarios: Mapping[str, Dataset], rng: np.random.Generator
) -> dict[str, Dataset]:
    """Resample each augmented composition to the same number of added sites.

    The added-site count is the minimum pool size over the three augmented
    scenarios; sites are drawn uniformly without replacement, always (even
    from pools already at the minimum), and the local set stays untouched.
    """
    local_ids = set(scenarios[SCENARIO_LOCAL].site_ids())
    pools: dict[str, list[str]] = {}
    for name in AUGMENTED_SCENARIOS:
        pool = [s for s in scenarios[name].site_ids() if s not in local_ids]
        if not pool:
            raise ExperimentError(f"size control: scenario {name!r} has an empty added-site pool")
        pools[name] = pool
    n_added = min(len(p) for p in pools.values())
    out: dict[str, Dataset] = {SCENARIO_LOCAL: scenarios[SCENARIO_LOCAL]}
    for name in AUGMENTED_SCENARIOS:
        pool = pools[name]
        chosen = rng.choice(len(pool), size=n_added, replace=False)
        keep = local_ids | {pool[i] for i in chosen}
        out[name] = subset_by_ids(scenarios[name], keep)
    return out


def resolve_composition(
    ds: Dataset, spec: ExperimentSpec, taxonomy: Taxonomy | None
) -> tuple[Dataset, int]:
    """The training dataset for a spec, plus its added-site count."""
    if spec.family == FAMILY_GLOBAL_LOCAL:
        if taxonomy is None:
            raise ExperimentError("global/local runs require a taxonomy")
        compositions = build_global_local(ds, taxonomy)
        if spec.model_id not in compositions:
            raise ExperimentError(
                f"sub-region {spec.roi!r} has no sites (model {spec.model_id})"
            )
        composition = compositions[spec.model_id]
        return composition, 0
    roi = parse_region_code(spec.roi)
    scenarios = build_similar_dissimilar(ds, roi)
    if spec.size_controlled:
        rng = np.random.default_rng(stable_seed(spec.data_seed, "size_control", spec.roi))
        scenarios = apply_size_control(scenarios, rng)
    composition = scenarios[spec.scenario]
    n_added = composition.n_sites - scenarios[SCENARIO_LOCAL].n_sites
    return composition, n_added


def eval_groups(
    ds: Dataset, spec: ExperimentSpec, taxonomy: Taxonomy | None
) -> dict[str, list[str]]:
    """Test-site groups (region label -> site ids) a run is evaluated on.

    Local models are evaluated on their own region's sites; the pooled
    model on every letter's sites, so each comparison uses identical
    (site, time) test pairs.
    """
    if spec.family == FAMILY_GLOBAL_LOCAL:
        groups: dict[str, list[str]] = {}
        for site in ds.sites:
            letter = taxonomy.subregion_of(site.region).letter
            groups.setdefault(letter, []).append(site.site_id)
        if spec.scenario == SCENARIO_GLOBAL:
            return dict(sorted(groups.items()))
        return {spec.roi: groups[spec.roi]}
    roi = parse_region_code(spec.roi)
    ids = [s.site_id for s in ds.sites if s.region == roi]
    return {spec.roi: ids}


# ---------------------------------------------------------------------------
# Run execution


def predict(params, ds: Dataset, stats: NormStats) -> np.ndarray:
    """(S, T) physical-unit predictions over a raw dataset's full axis."""
    normed = apply_normalization(ds, stats)
    forcing = normed.forcing_tensor()
    attrs = normed.attr_matrix()
    S, T, F = forcing.shape
    x = np.concatenate(
        [forcing, np.broadcast_to(attrs[:, None, :], (S, T, attrs.shape[1]))], axis=2
    )
    yhat, _ = forward(params, x, want_cache=False)
    return denormalize_target(yhat, stats)


@dataclass
class RunResult:
    """Everything one run produces, kept in memory; the suite writes files."""

    manifest: dict
    metrics_rows: list[tuple[str, str, SiteMetrics]] | None = None
    train_log_csv: str | None = None
    checkpoint_bytes: bytes | None = None

    @property
    def ok(self) -> bool:
        return self.manifest["status"] == "ok"

    @property
    def run_id(self) -> str:
        return self.manifest["run_id"]

    @property
    def model_id(self) -> str:
        return self.manifest["model_id"]


def _base_manifest(spec: ExperimentSpec, taxonomy: Taxonomy | None) -> dict:
    manifest = {
        "run_id": spec.run_id,
        "model_id": spec.model_id,
        "spec": spec.to_dict(),
        "version": __version__,
        "seeds": {"train": spec.train.seed, "data": spec.data_seed},
        "notes": [
            "minibatch windows drawn with replacement",
            "size control operates on whole sites, not single observations",
        ],
    }
    if taxonomy is not None:
        manifest["taxonomy"] = {
            sub.letter: sorted(str(c) for c in sub.member_codes)
            for sub in taxonomy.subregions
        }
    return manifest


def execute_run(
    ds: Dataset, spec: ExperimentSpec, taxonomy: Taxonomy | None
) -> RunResult:
    """Train one model and evaluate it on its test groups.

    Failures are captured in the manifest rather than raised, so sibling
    runs in a suite continue.
    """
    manifest = _base_manifest(spec, taxonomy)
    try:
        composition, n_added = resolve_composition(ds, spec, taxonomy)
        train_ds = slice_time(composition, spec.train_start, spec.train_end)
        stats = fit_normalization(train_ds)
        normed_train = apply_normalization(train_ds, stats)
        dims = NetworkDims(
            len(ds.feature_names) + len(ds.attr_names), spec.hidden_size
        )
        params, log = train(normed_train, dims, spec.train)

        groups = eval_groups(ds, spec, taxonomy)
        eval_ids = [sid for ids in groups.values() for sid in ids]
        test_ds = slice_time(subset_by_ids(ds, eval_ids), spec.test_start, spec.test_end)
        preds = predict(params, test_ds, stats)
        by_id = {site.site_id: i for i, site in enumerate(test_ds.sites)}
        metrics_rows = []
        for label, ids in groups.items():
            for sid in ids:
                site = test_ds.sites[by_id[sid]]
                metrics_rows.append(
                    (label, spec.model_id, site_metrics(sid, site.target, preds[by_id[sid]]))
                )

        manifest.update(
            {
                "status": "ok",
                "error": None,
                "n_train_sites": composition.n_sites,
                "n_added_sites": n_added,
                "final_train_loss": log.final_loss,
                "empty_windows_accepted": log.empty_windows_accepted,
                "files": {
                    "checkpoint": "checkpoint.bin",
                    "metrics": "metrics.csv",
                    "train_log": "train_log.csv",
                    "comparisons": "comparisons.csv",
                },
            }
        )
        return RunResult(
            manifest=manifest,
            metrics_rows=metrics_rows,
            train_log_csv=log.to_csv(),
            checkpoint_bytes=dumps_checkpoint(params),
        )
    except Exception as exc:  # recorded, not raised: sibling runs continue
        manifest.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        return RunResult(manifest=manifest)


def _execute_run_star(args) -> RunResult:
    return execute_run(*args)


# ---------------------------------------------------------------------------
# Suite orchestration


def plan_global_local(
    ds: Dataset,
    taxonomy: Taxonomy,
    train_cfg: TrainConfig,
    hidden_size: int,
    windows: tuple[dt.date, dt.date, dt.date, dt.date],
    data_seed: int,
) -> list[ExperimentSpec]:
    """One pooled spec plus one local spec per populated letter."""
    compositions = build_global_local(ds, taxonomy)
    specs = []
    for model_id in compositions:
        scenario = SCENARIO_GLOBAL if model_id == "global" else SCENARIO_LOCAL
        roi = None if scenario == SCENARIO_GLOBAL else model_id.split(":", 1)[1]
        specs.append(
            ExperimentSpec(
                family=FAMILY_GLOBAL_LOCAL,
                scenario=scenario,
                roi=roi,
                size_controlled=False,
                train_start=windows[0],
                train_end=windows[1],
                test_start=windows[2],
                test_end=windows[3],
                train=dataclasses.replace(
                    train_cfg, seed=stable_seed(train_cfg.seed, model_id)
                ),
                hidden_size=hidden_size,
                data_seed=data_seed,
            )
        )
    return specs


def plan_similar_dissimilar(
    ds: Dataset,
    rois: Sequence[RegionCode],
    size_controlled: bool,
    train_cfg: TrainConfig,
    hidden_size: int,
    windows: tuple[dt.date, dt.date, dt.date, dt.date],
    data_seed: int,
) -> list[ExperimentSpec]:
    """Four scenario specs per region of interest."""
    specs = []
    for roi in rois:
        for scenario in (SCENARIO_LOCAL, *AUGMENTED_SCENARIOS):
            model_id = f"{roi}:{scenario}" + ("+sc" if size_controlled else "")
            specs.append(
                ExperimentSpec(
                    family=FAMILY_SIMILAR_DISSIMILAR,
                    scenario=scenario,
                    roi=str(roi),
                    size_controlled=size_controlled,
                    train_start=windows[0],
                    train_end=windows[1],
                    test_start=windows[2],
                    test_end=windows[3],
                    train=dataclasses.replace(
                        train_cfg, seed=stable_seed(train_cfg.seed, model_id)
                    ),
                    hidden_size=hidden_size,
                    data_seed=data_seed,
                )
            )
    return specs


def eligible_rois(ds: Dataset, min_sites: int) -> list[RegionCode]:
    """Level-III codes with at least min_sites sites, sorted by code."""
    counts: dict[RegionCode, int] = {}
    for site in ds.sites:
        counts[site.region] = counts.get(site.region, 0) + 1
    return sorted(r for r, n in counts.items() if n >= min_sites)


def build_comparisons(
    results: Sequence[RunResult], metrics: Sequence[str]
) -> list[PairedComparison]:
    """All per-region and pooled paired comparisons a suite's runs support."""
    ok = [r for r in results if r.ok]
    by_model: dict[str, RunResult] = {r.model_id: r for r in ok}
    comparisons: list[PairedComparison] = []

    def rows_for(model_id: str, region: str) -> list[SiteMetrics]:
        return [
            m for (label, _, m) in by_model[model_id].metrics_rows if label == region
        ]

    # pooled model vs. per-letter local models
    local_letters = sorted(
        r.model_id.split(":", 1)[1]
        for r in ok
        if r.manifest["spec"]["family"] == FAMILY_GLOBAL_LOCAL
        and r.model_id.startswith("local:")
    )
    if "global" in by_model and local_letters:
        for metric in metrics:
            per_region = []
            for letter in local_letters:
                per_region.append(
                    compare_models(
                        rows_for("global", letter),
                        rows_for(f"local:{letter}", letter),
                        metric,
                        "global",
                        f"local:{letter}",
                        region=letter,
                    )
                )
            comparisons.extend(per_region)
            if len(per_region) >= 2:
                comparisons.append(
                    pool_comparisons(per_region, model_a="global", model_b="local")
                )

    # similar/dissimilar scenario pairs per region of interest
    sd_runs = [
        r for r in ok if r.manifest["spec"]["family"] == FAMILY_SIMILAR_DISSIMILAR
    ]
    rois = sorted({r.manifest["spec"]["roi"] for r in sd_runs})
    suffix = "+sc" if any(r.manifest["spec"]["size_controlled"] for r in sd_runs) else ""
    for metric in metrics:
        for scen_a, scen_b in SCENARIO_PAIRS:
            per_region = []
            for roi in rois:
                model_a = f"{roi}:{scen_a}{suffix}"
                model_b = f"{roi}:{scen_b}{suffix}"
                if model_a in by_model and model_b in by_model:
                    per_region.append(
                        compare_models(
                            rows_for(model_a, roi),
                            rows_for(model_b, roi),
                            metric,
                            model_a,
                            model_b,
                            region=roi,
                        )
                    )
            comparisons.extend(per_region)
            if len(per_region) >= 2:
                comparisons.append(
                    pool_comparisons(
                        per_region,
                        model_a=f"{scen_a}{suffix}",
                        model_b=f"{scen_b}{suffix}",
                    )
                )
    return comparisons


def write_run_files(result: RunResult, runs_dir: Path, comparisons: Sequence[PairedComparison]) -> Path:
    """Write one run's directory; all writes happen in the calling process."""
    run_dir = runs_dir / result.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "manifest.json").write_text(
        json.dumps(result.manifest, sort_keys=True, indent=2) + "\n"
    )
    if result.ok:
        (run_dir / "checkpoint.bin").write_bytes(result.checkpoint_bytes)
        (run_dir / "metrics.csv").write_text(metrics_to_csv(result.metrics_rows))
        (run_dir / "train_log.csv").write_text(result.train_log_csv)
        mine = [
            c
            for c in comparisons
            if result.model_id in (c.model_a, c.model_b)
        ]
        (run_dir / "comparisons.csv").write_text(comparisons_to_csv(mine))
    return run_dir


def run_suite(
    ds: Dataset,
    specs: Sequence[ExperimentSpec],
    out_dir: str | Path,
    taxonomy: Taxonomy | None = None,
    metrics: Sequence[str] = ("rmse", "corr", "nse"),
    workers: int = 1,
) -> tuple[list[RunResult], list[PairedComparison]]:
    """Execute specs (optionally in parallel), write artifacts, compare models.

    Workers compute in subprocesses; every file is written serially here.
    """
    out_dir = Path(out_dir)
    ids = [s.run_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ExperimentError("duplicate run ids in suite; specs must be distinct")
    jobs = [(ds, spec, taxonomy) for spec in specs]
    if workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(specs))) as pool:
            results = list(pool.map(_execute_run_star, jobs))
    else:
        results = [execute_run(*job) for job in jobs]

    comparisons = build_comparisons(results, metrics)
    runs_dir = out_dir / "runs"
    for result in sorted(results, key=lambda r: r.run_id):
        write_run_files(result, runs_dir, comparisons)
    (out_dir / "comparisons.csv").write_text(comparisons_to_csv(comparisons))
    return results, comparisons


def run_from_manifest(
    manifest_path: str | Path, ds: Dataset, out_dir: str | Path
) -> RunResult:
    """Re-execute a single run exactly as recorded in its manifest."""
    manifest = json.loads(Path(manifest_path).read_text())
    spec = ExperimentSpec.from_dict(manifest["spec"])
    taxonomy = None
    if "taxonomy" in manifest:
        taxonomy = Taxonomy(
            [
                SubRegion(letter, frozenset(parse_region_code(c) for c in codes))
                for letter, codes in manifest["taxonomy"].items()
            ]
        )
    result = execute_run(ds, spec, taxonomy)
    write_run_files(result, Path(out_dir) / "runs", [])
    return result
