import datetime as dt

import pytest

from synbench.config import ConfigError, load_config
from synbench.worldgen import OffsetScales

FULL = """
# full configuration exercising every section
[world]
n_level1 = 2
n_level2 = 2
n_level3 = 2
sites_per_region = 3
n_days = 90          # three months
sigma_capacity = 10, 5, 2, 1
sigma_recession = 0.04, 0.02, 0.01, 0.005
sigma_exponent = 0.3, 0.2, 0.1, 0.02
sigma_evap = 0.1, 0.06, 0.02, 0.01
obs_noise = 0.03
attr_noise = 0.08
revisit_min = 2
revisit_max = 3
target_kind = wetness
seed = 42

[train]
window_len = 15
batch_size = 16
epochs = 4
rho = 0.95
epsilon = 1e-6
clip_norm = 5.0
dropout = 0.0
warmup_steps = 0
hidden_size = 8
seed = 7

[experiment]
family = global_local
taxonomy = level2
train_start = 2000-01-01
train_end = 2000-02-15
test_start = 2000-02-15
test_end = 2000-03-30
data_seed = 11

[eval]
metrics = rmse, corr

[io]
workers = 2
"""


def write(tmp_path, text, name="config.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_full_config(tmp_path):
    cfg = load_config(write(tmp_path, FULL))
    assert cfg.world.n_level1 == 2
    assert cfg.world.seed == 42
    assert cfg.world.sigma_capacity == OffsetScales(10, 5, 2, 1)
    assert cfg.train.window_len == 15
    assert cfg.train.seed == 7
    assert cfg.hidden_size == 8
    assert cfg.experiment.family == "global_local"
    assert cfg.experiment.train_start == dt.date(2000, 1, 1)
    assert cfg.metrics == ("rmse", "corr")
    assert cfg.workers == 2


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(write(tmp_path, "[mystery]\nx = 1\n"))


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(write(tmp_path, "[world]\nseed = 1\nwibble = 2\n"))


def test_missing_world_seed(tmp_path):
    with pytest.raises(ConfigError, match="world.seed"):
        load_config(write(tmp_path, "[world]\nn_level1 = 2\n"))


def test_missing_train_seed(tmp_path):
    with pytest.raises(ConfigError, match="train.seed"):
        load_config(write(tmp_path, "[train]\nepochs = 2\n"))


def test_missing_experiment_data_seed(tmp_path):
    text = (
        "[experiment]\nfamily = global_local\n"
        "train_start = 2000-01-01\ntrain_end = 2000-02-01\n"
        "test_start = 2000-02-01\ntest_end = 2000-03-01\n"
    )
    with pytest.raises(ConfigError, match="experiment.data_seed"):
        load_config(write(tmp_path, text))


def test_bad_sigma_arity(tmp_path):
    with pytest.raises(ConfigError, match="four comma-separated"):
        load_config(write(tmp_path, "[world]\nseed = 1\nsigma_capacity = 1, 2\n"))


def test_invalid_window_order(tmp_path):
    text = (
        "[experiment]\nfamily = global_local\ndata_seed = 1\n"
        "train_start = 2000-03-01\ntrain_end = 2000-02-01\n"
        "test_start = 2000-02-01\ntest_end = 2000-03-01\n"
    )
    with pytest.raises(ConfigError, match="windows"):
        load_config(write(tmp_path, text))


def test_bad_family(tmp_path):
    text = (
        "[experiment]\nfamily = continental\ndata_seed = 1\n"
        "train_start = 2000-01-01\ntrain_end = 2000-02-01\n"
        "test_start = 2000-02-01\ntest_end = 2000-03-01\n"
    )
    with pytest.raises(ConfigError, match="experiment.family"):
        load_config(write(tmp_path, text))


def test_size_control_requires_similar_dissimilar(tmp_path):
    text = (
        "[experiment]\nfamily = global_local\ndata_seed = 1\nsize_controlled = true\n"
        "train_start = 2000-01-01\ntrain_end = 2000-02-01\n"
        "test_start = 2000-02-01\ntest_end = 2000-03-01\n"
    )
    with pytest.raises(ConfigError, match="size_controlled"):
        load_config(write(tmp_path, text))


def test_unknown_metric(tmp_path):
    with pytest.raises(ConfigError, match="unknown metric"):
        load_config(write(tmp_path, "[eval]\nmetrics = rmse, kge\n"))


def test_seed_override(tmp_path):
    cfg = load_config(write(tmp_path, FULL), seed_override=1234)
    assert cfg.world.seed == 1234
    assert cfg.train.seed == 1234
    assert cfg.experiment.data_seed == 1234


def test_world_invariant_violation_becomes_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[world]\nseed = 1\nrevisit_min = 0\n"))


def test_require_missing_section(tmp_path):
    cfg = load_config(write(tmp_path, "[io]\nworkers = 1\n"))
    with pytest.raises(ConfigError, match=r"requires a \[world\] section"):
        cfg.require("world")
