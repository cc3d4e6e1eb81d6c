import datetime as dt
import json

import numpy as np
import pytest

from synbench.experiments import (
    FAMILY_GLOBAL_LOCAL,
    FAMILY_SIMILAR_DISSIMILAR,
    SCENARIO_GLOBAL,
    SCENARIO_LOCAL,
    SCENARIO_LOCAL_CLOSE,
    SCENARIO_LOCAL_DISSIMILAR,
    SCENARIO_LOCAL_FAR,
    ExperimentError,
    ExperimentSpec,
    apply_size_control,
    build_comparisons,
    build_global_local,
    build_similar_dissimilar,
    eligible_rois,
    execute_run,
    plan_global_local,
    plan_similar_dissimilar,
    run_from_manifest,
    run_suite,
    stable_seed,
)
from synbench.regions import EPA_SUBREGIONS, parse_region_code, taxonomy_from_codes
from synbench.training import TrainConfig
from synbench.worldgen import WorldConfig, gen_world

from util import make_dataset


def small_world(seed=11, **kwargs):
    defaults = dict(
        n_level1=2,
        n_level2=2,
        n_level3=2,
        sites_per_region=3,
        n_days=60,
        revisit_min=1,
        revisit_max=2,
        seed=seed,
    )
    defaults.update(kwargs)
    return gen_world(WorldConfig(**defaults))[0]


def small_spec(**kwargs):
    axis_start = dt.date(2000, 1, 1)
    defaults = dict(
        family=FAMILY_GLOBAL_LOCAL,
        scenario=SCENARIO_GLOBAL,
        roi=None,
        size_controlled=False,
        train_start=axis_start,
        train_end=axis_start + dt.timedelta(days=30),
        test_start=axis_start + dt.timedelta(days=30),
        test_end=axis_start + dt.timedelta(days=60),
        train=TrainConfig(window_len=10, batch_size=8, epochs=2, seed=7),
        hidden_size=4,
        data_seed=3,
    )
    defaults.update(kwargs)
    return ExperimentSpec(**defaults)


def test_spec_validation():
    with pytest.raises(ExperimentError, match="invalid for the global/local"):
        small_spec(scenario=SCENARIO_LOCAL_CLOSE)
    with pytest.raises(ExperimentError, match="requires a sub-region letter"):
        small_spec(scenario=SCENARIO_LOCAL)
    with pytest.raises(ExperimentError, match="size control"):
        small_spec(size_controlled=True)
    with pytest.raises(ExperimentError, match="windows"):
        small_spec(test_start=dt.date(1999, 1, 1))
    with pytest.raises(ExperimentError, match="global scenario invalid"):
        small_spec(family=FAMILY_SIMILAR_DISSIMILAR, roi="S1.1.1")


def test_spec_model_ids_and_round_trip():
    spec = small_spec()
    assert spec.model_id == "global"
    local = small_spec(scenario=SCENARIO_LOCAL, roi="A")
    assert local.model_id == "local:A"
    sd = small_spec(
        family=FAMILY_SIMILAR_DISSIMILAR,
        scenario=SCENARIO_LOCAL_FAR,
        roi="S1.1.1",
        size_controlled=True,
    )
    assert sd.model_id == "S1.1.1:local_far+sc"
    restored = ExperimentSpec.from_dict(json.loads(json.dumps(sd.to_dict())))
    assert restored == sd
    assert restored.run_id == sd.run_id


def test_build_global_local_partition():
    ds = make_dataset(
        [("s1", "5.1.1"), ("s2", "5.2.1"), ("s3", "6.1.1")], n_days=8
    )
    out = build_global_local(ds, EPA_SUBREGIONS)
    assert set(out) == {"global", "local:A", "local:B"}
    assert out["global"].n_sites == 3
    assert out["local:A"].site_ids() == ("s1", "s2")
    assert out["local:B"].site_ids() == ("s3",)
    assert out["global"].n_sites == sum(
        out[k].n_sites for k in out if k.startswith("local:")
    )


def test_build_similar_dissimilar_worked_example():
    ds = make_dataset(
        [
            ("s1", "8.3.5"),
            ("s2", "8.3.4"),
            ("s3", "8.1.7"),
            ("s4", "8.4.2"),
            ("s5", "9.4.2"),
            ("s6", "10.1.1"),
            ("s7", "8.3.5"),
        ],
        n_days=8,
    )
    roi = parse_region_code("8.3.5")
    out = build_similar_dissimilar(ds, roi)
    assert out[SCENARIO_LOCAL].site_ids() == ("s1", "s7")
    # local + close covers exactly level-II region 8.3
    assert out[SCENARIO_LOCAL_CLOSE].site_ids() == ("s1", "s2", "s7")
    # local + far excludes the close sibling 8.3.4
    assert out[SCENARIO_LOCAL_FAR].site_ids() == ("s1", "s3", "s4", "s7")
    assert out[SCENARIO_LOCAL_DISSIMILAR].site_ids() == ("s1", "s5", "s6", "s7")
    roi_ids = {"s1", "s7"}
    for subset in out.values():
        assert roi_ids <= set(subset.site_ids())
    # scenario set algebra: close and dissimilar intersect exactly on the ROI
    close_ids = set(out[SCENARIO_LOCAL_CLOSE].site_ids())
    dis_ids = set(out[SCENARIO_LOCAL_DISSIMILAR].site_ids())
    assert close_ids & dis_ids == roi_ids


def test_build_similar_dissimilar_empty_roi():
    ds = make_dataset([("s1", "8.3.4")], n_days=8)
    with pytest.raises(ExperimentError, match="no sites"):
        build_similar_dissimilar(ds, parse_region_code("8.3.5"))


def _uneven_world():
    specs = [("roi%d" % i, "1.1.1") for i in range(2)]
    specs += [("close%d" % i, "1.1.2") for i in range(4)]
    specs += [("far%d" % i, "1.2.1") for i in range(9)]
    specs += [("dis%d" % i, "2.1.1") for i in range(30)]
    return make_dataset(specs, n_days=8)


def test_apply_size_control_min_rule():
    ds = _uneven_world()
    scenarios = build_similar_dissimilar(ds, parse_region_code("1.1.1"))
    rng = np.random.default_rng(0)
    controlled = apply_size_control(scenarios, rng)
    local_n = controlled[SCENARIO_LOCAL].n_sites
    assert local_n == 2
    for name in (SCENARIO_LOCAL_CLOSE, SCENARIO_LOCAL_FAR, SCENARIO_LOCAL_DISSIMILAR):
        assert controlled[name].n_sites - local_n == 4
        assert set(controlled[SCENARIO_LOCAL].site_ids()) <= set(controlled[name].site_ids())


def test_apply_size_control_equal_pools_still_sampled():
    specs = [("roi", "1.1.1")]
    specs += [("c%d" % i, "1.1.2") for i in range(3)]
    specs += [("f%d" % i, "1.2.1") for i in range(3)]
    specs += [("d%d" % i, "2.1.1") for i in range(3)]
    ds = make_dataset(specs, n_days=8)
    scenarios = build_similar_dissimilar(ds, parse_region_code("1.1.1"))
    controlled = apply_size_control(scenarios, np.random.default_rng(1))
    for name in (SCENARIO_LOCAL_CLOSE, SCENARIO_LOCAL_FAR, SCENARIO_LOCAL_DISSIMILAR):
        assert controlled[name].n_sites == 4


def test_apply_size_control_deterministic():
    ds = _uneven_world()
    scenarios = build_similar_dissimilar(ds, parse_region_code("1.1.1"))
    first = apply_size_control(scenarios, np.random.default_rng(9))
    second = apply_size_control(scenarios, np.random.default_rng(9))
    for name in first:
        assert first[name].site_ids() == second[name].site_ids()


def test_apply_size_control_empty_pool_names_scenario():
    ds = make_dataset([("roi", "1.1.1"), ("far", "1.2.1"), ("dis", "2.1.1")], n_days=8)
    scenarios = build_similar_dissimilar(ds, parse_region_code("1.1.1"))
    with pytest.raises(ExperimentError, match="local_close"):
        apply_size_control(scenarios, np.random.default_rng(0))


def test_eligible_rois():
    ds = make_dataset(
        [("a%d" % i, "1.1.1") for i in range(5)]
        + [("b%d" % i, "1.1.2") for i in range(2)],
        n_days=8,
    )
    assert [str(r) for r in eligible_rois(ds, 3)] == ["1.1.1"]
    assert [str(r) for r in eligible_rois(ds, 1)] == ["1.1.1", "1.1.2"]


def test_execute_run_deterministic():
    ds = small_world()
    tax = taxonomy_from_codes([s.region for s in ds.sites], level=2)
    spec = small_spec()
    r1 = execute_run(ds, spec, tax)
    r2 = execute_run(ds, spec, tax)
    assert r1.ok and r2.ok
    assert r1.checkpoint_bytes == r2.checkpoint_bytes
    assert r1.metrics_rows == r2.metrics_rows
    assert r1.manifest == r2.manifest


def test_execute_run_failure_recorded():
    ds = small_world()
    tax = taxonomy_from_codes([s.region for s in ds.sites], level=2)
    spec = small_spec(scenario=SCENARIO_LOCAL, roi="Z")  # letter with no sites
    result = execute_run(ds, spec, tax)
    assert not result.ok
    assert "Z" in result.manifest["error"]
    assert result.checkpoint_bytes is None


def test_no_test_leakage():
    # perturbing test-window targets must not change the trained model
    ds = small_world()
    tax = taxonomy_from_codes([s.region for s in ds.sites], level=2)
    spec = small_spec()
    baseline = execute_run(ds, spec, tax)

    from synbench.data import Dataset, Site

    cut = 30  # train window is the first 30 days
    mutated_sites = []
    for s in ds.sites:
        target = s.target.copy()
        target[cut:] = np.where(np.isfinite(target[cut:]), 99.9, np.nan)
        mutated_sites.append(
            Site(s.site_id, s.region, s.static_attrs, s.forcing, target)
        )
    mutated = Dataset(
        tuple(mutated_sites), ds.time_axis, ds.feature_names, ds.attr_names
    )
    shifted = execute_run(mutated, spec, tax)
    assert shifted.checkpoint_bytes == baseline.checkpoint_bytes


def test_plan_global_local_skips_empty_letters():
    ds = small_world()
    # group by level-1 so there are two letters; drop every site of one level-1
    from synbench.data import subset_by_region

    half = subset_by_region(ds, lambda r: r.level1 == "S1")
    tax = taxonomy_from_codes([s.region for s in ds.sites], level=1)
    specs = plan_global_local(
        half,
        tax,
        TrainConfig(window_len=10, batch_size=4, epochs=1, seed=0),
        hidden_size=4,
        windows=(
            dt.date(2000, 1, 1),
            dt.date(2000, 1, 31),
            dt.date(2000, 1, 31),
            dt.date(2000, 2, 29),
        ),
        data_seed=0,
    )
    ids = [s.model_id for s in specs]
    assert ids == ["global", "local:A"]
    # per-run train seeds are distinct but deterministic
    assert specs[0].train.seed == stable_seed(0, "global")
    assert specs[1].train.seed == stable_seed(0, "local:A")


def test_run_suite_global_local(tmp_path):
    ds = small_world()
    tax = taxonomy_from_codes([s.region for s in ds.sites], level=1)
    specs = plan_global_local(
        ds,
        tax,
        TrainConfig(window_len=10, batch_size=8, epochs=2, seed=5),
        hidden_size=4,
        windows=(
            dt.date(2000, 1, 1),
            dt.date(2000, 1, 31),
            dt.date(2000, 1, 31),
            dt.date(2000, 2, 29),
        ),
        data_seed=1,
    )
    results, comparisons = run_suite(ds, specs, tmp_path, taxonomy=tax, metrics=("rmse",))
    assert all(r.ok for r in results)
    run_dirs = sorted((tmp_path / "runs").iterdir())
    assert len(run_dirs) == 3  # global + 2 letters
    for run_dir in run_dirs:
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert (run_dir / "checkpoint.bin").exists()
        assert (run_dir / "metrics.csv").exists()
        assert (run_dir / "train_log.csv").exists()
    regions = [c.region for c in comparisons]
    assert regions == ["A", "B", "All"]
    all_row = comparisons[-1]
    assert all_row.n == comparisons[0].n + comparisons[1].n
    assert (tmp_path / "comparisons.csv").exists()


def test_run_suite_test_set_identity(tmp_path):
    # every scenario of one ROI is evaluated on exactly the same test sites
    ds = small_world()
    rois = [parse_region_code("S1.1.1")]
    specs = plan_similar_dissimilar(
        ds,
        rois,
        size_controlled=False,
        train_cfg=TrainConfig(window_len=10, batch_size=8, epochs=2, seed=5),
        hidden_size=4,
        windows=(
            dt.date(2000, 1, 1),
            dt.date(2000, 1, 31),
            dt.date(2000, 1, 31),
            dt.date(2000, 2, 29),
        ),
        data_seed=1,
    )
    results, comparisons = run_suite(ds, specs, tmp_path, metrics=("rmse",))
    assert all(r.ok for r in results)
    eval_sets = {
        r.model_id: tuple(m.site_id for _, _, m in r.metrics_rows) for r in results
    }
    sets = set(eval_sets.values())
    assert len(sets) == 1
    # four scenario runs and four comparison pairs for a single ROI
    assert len(results) == 4
    assert [(c.model_a, c.model_b) for c in comparisons] == [
        ("S1.1.1:local", "S1.1.1:local_close"),
        ("S1.1.1:local_close", "S1.1.1:local_far"),
        ("S1.1.1:local_far", "S1.1.1:local_dissimilar"),
        ("S1.1.1:local_close", "S1.1.1:local_dissimilar"),
    ]


def test_run_suite_records_added_site_counts(tmp_path):
    ds = small_world()
    rois = eligible_rois(ds, 3)[:2]
    specs = plan_similar_dissimilar(
        ds,
        rois,
        size_controlled=True,
        train_cfg=TrainConfig(window_len=10, batch_size=4, epochs=1, seed=2),
        hidden_size=4,
        windows=(
            dt.date(2000, 1, 1),
            dt.date(2000, 1, 31),
            dt.date(2000, 1, 31),
            dt.date(2000, 2, 29),
        ),
        data_seed=4,
    )
    results, _ = run_suite(ds, specs, tmp_path, metrics=("rmse",))
    assert all(r.ok for r in results)
    for roi in rois:
        added = {
            r.manifest["n_added_sites"]
            for r in results
            if r.manifest["spec"]["roi"] == str(roi)
            and r.manifest["spec"]["scenario"] != "local"
        }
        assert len(added) == 1  # identical added counts across augmented scenarios
        local_added = [
            r.manifest["n_added_sites"]
            for r in results
            if r.manifest["spec"]["roi"] == str(roi)
            and r.manifest["spec"]["scenario"] == "local"
        ]
        assert local_added == [0]


def test_run_suite_sibling_survives_failure(tmp_path):
    ds = small_world()
    tax = taxonomy_from_codes([s.region for s in ds.sites], level=1)
    good = small_spec()
    bad = small_spec(scenario=SCENARIO_LOCAL, roi="Z")
    results, comparisons = run_suite(ds, [good, bad], tmp_path, taxonomy=tax, metrics=("rmse",))
    by_id = {r.model_id: r for r in results}
    assert by_id["global"].ok
    assert not by_id["local:Z"].ok
    failed_dir = tmp_path / "runs" / bad.run_id
    manifest = json.loads((failed_dir / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert comparisons == []  # no usable pairs


def test_rerun_from_manifest_byte_identical(tmp_path):
    ds = small_world()
    tax = taxonomy_from_codes([s.region for s in ds.sites], level=2)
    spec = small_spec()
    results, _ = run_suite(ds, [spec], tmp_path / "first", taxonomy=tax, metrics=("rmse",))
    run_dir = tmp_path / "first" / "runs" / spec.run_id
    rerun = run_from_manifest(run_dir / "manifest.json", ds, tmp_path / "second")
    rerun_dir = tmp_path / "second" / "runs" / spec.run_id
    assert (run_dir / "checkpoint.bin").read_bytes() == (rerun_dir / "checkpoint.bin").read_bytes()
    assert (run_dir / "metrics.csv").read_bytes() == (rerun_dir / "metrics.csv").read_bytes()
    assert (run_dir / "train_log.csv").read_bytes() == (rerun_dir / "train_log.csv").read_bytes()


def test_run_suite_parallel_matches_serial(tmp_path):
    ds = small_world()
    tax = taxonomy_from_codes([s.region for s in ds.sites], level=1)
    specs = plan_global_local(
        ds,
        tax,
        TrainConfig(window_len=10, batch_size=4, epochs=1, seed=9),
        hidden_size=4,
        windows=(
            dt.date(2000, 1, 1),
            dt.date(2000, 1, 31),
            dt.date(2000, 1, 31),
            dt.date(2000, 2, 29),
        ),
        data_seed=2,
    )
    run_suite(ds, specs, tmp_path / "serial", taxonomy=tax, metrics=("rmse",), workers=1)
    run_suite(ds, specs, tmp_path / "parallel", taxonomy=tax, metrics=("rmse",), workers=2)
    for spec in specs:
        a = tmp_path / "serial" / "runs" / spec.run_id
        b = tmp_path / "parallel" / "runs" / spec.run_id
        for name in ("checkpoint.bin", "metrics.csv", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
