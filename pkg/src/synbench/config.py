"""Sectioned key=value configuration files.

Sections `world`, `train`, `experiment`, `eval`, and `io`; `#` starts a
comment.  Every key mirrors a typed field in the owning module, unknown
keys and sections are rejected, and seeds are always explicit: a present
section must spell out its seed, nothing falls back to wall-clock state.
"""

from __future__ import annotations

import configparser
import datetime as dt
import os
from dataclasses import dataclass
from pathlib import Path

from synbench.training import TrainConfig
from synbench.worldgen import OffsetScales, WorldConfig


class ConfigError(ValueError):
    """Malformed, unknown, or missing configuration content."""


_WORLD_KEYS = {
    "n_level1",
    "n_level2",
    "n_level3",
    "sites_per_region",
    "n_days",
    "sigma_capacity",
    "sigma_recession",
    "sigma_exponent",
    "sigma_evap",
    "obs_noise",
    "attr_noise",
    "revisit_min",
    "revisit_max",
    "target_kind",
    "seed",
}
_TRAIN_KEYS = {
    "window_len",
    "batch_size",
    "epochs",
    "rho",
    "epsilon",
    "clip_norm",
    "dropout",
    "warmup_steps",
    "hidden_size",
    "seed",
}
_EXPERIMENT_KEYS = {
    "family",
    "rois",
    "taxonomy",
    "size_controlled",
    "min_roi_sites",
    "train_start",
    "train_end",
    "test_start",
    "test_end",
    "data_seed",
}
_EVAL_KEYS = {"metrics"}
_IO_KEYS = {"workers"}

_SECTION_KEYS = {
    "world": _WORLD_KEYS,
    "train": _TRAIN_KEYS,
    "experiment": _EXPERIMENT_KEYS,
    "eval": _EVAL_KEYS,
    "io": _IO_KEYS,
}

FAMILIES = ("global_local", "similar_dissimilar")
TAXONOMY_CHOICES = ("builtin", "level1", "level2")
VALID_METRICS = ("rmse", "corr", "nse")


@dataclass(frozen=True)
class ExperimentSettings:
    family: str
    rois: tuple[str, ...]          # empty means auto-select eligible ROIs
    taxonomy: str                  # builtin | level1 | level2 | path to CSV
    size_controlled: bool
    min_roi_sites: int
    train_start: dt.date
    train_end: dt.date
    test_start: dt.date
    test_end: dt.date
    data_seed: int


@dataclass(frozen=True)
class Config:
    """Typed view of one configuration file; absent sections stay None."""

    world: WorldConfig | None
    train: TrainConfig | None
    hidden_size: int | None
    experiment: ExperimentSettings | None
    metrics: tuple[str, ...]
    workers: int

    def require(self, section: str):
        value = {
            "world": self.world,
            "train": self.train,
            "experiment": self.experiment,
        }[section]
        if value is None:
            raise ConfigError(f"this command requires a [{section}] section")
        return value


_REQUIRED = object()


class _Section:
    """One section's raw strings with typed getters and error context."""

    def __init__(self, name: str, raw: dict[str, str]):
        self.name = name
        self.raw = raw

    def _convert(self, key: str, default, conv):
        if key not in self.raw:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {self.name}.{key}")
            return default
        return conv(self.raw[key].strip())

    def get_int(self, key: str, default=None):
        def conv(text):
            try:
                return int(text)
            except ValueError:
                raise ConfigError(
                    f"{self.name}.{key} must be an integer, got {text!r}"
                ) from None

        return self._convert(key, default, conv)

    def get_float(self, key: str, default=None):
        def conv(text):
            try:
                return float(text)
            except ValueError:
                raise ConfigError(
                    f"{self.name}.{key} must be a number, got {text!r}"
                ) from None

        return self._convert(key, default, conv)

    def get_bool(self, key: str, default=None):
        def conv(text):
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ConfigError(f"{self.name}.{key} must be a boolean, got {text!r}")

        return self._convert(key, default, conv)

    def get_str(self, key: str, default=None):
        return self._convert(key, default, str)

    def get_date(self, key: str, default=None):
        def conv(text):
            try:
                return dt.date.fromisoformat(text)
            except ValueError:
                raise ConfigError(
                    f"{self.name}.{key} must be an ISO date, got {text!r}"
                ) from None

        return self._convert(key, default, conv)

    def get_scales(self, key: str, default=None):
        def conv(text):
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != 4:
                raise ConfigError(
                    f"{self.name}.{key} must be four comma-separated scales "
                    f"(level1,level2,level3,site), got {text!r}"
                )
            try:
                return OffsetScales(*(float(p) for p in parts))
            except ValueError:
                raise ConfigError(
                    f"{self.name}.{key} has a non-numeric scale: {text!r}"
                ) from None

        return self._convert(key, default, conv)

    def get_list(self, key: str, default=()):
        def conv(text):
            return tuple(p.strip() for p in text.split(",") if p.strip())

        return self._convert(key, tuple(default) if default is not _REQUIRED else default, conv)


def _world_from(section: _Section) -> WorldConfig:
    defaults = WorldConfig(seed=0)
    return WorldConfig(
        n_level1=section.get_int("n_level1", defaults.n_level1),
        n_level2=section.get_int("n_level2", defaults.n_level2),
        n_level3=section.get_int("n_level3", defaults.n_level3),
        sites_per_region=section.get_int("sites_per_region", defaults.sites_per_region),
        n_days=section.get_int("n_days", defaults.n_days),
        sigma_capacity=section.get_scales("sigma_capacity", defaults.sigma_capacity),
        sigma_recession=section.get_scales("sigma_recession", defaults.sigma_recession),
        sigma_exponent=section.get_scales("sigma_exponent", defaults.sigma_exponent),
        sigma_evap=section.get_scales("sigma_evap", defaults.sigma_evap),
        obs_noise=section.get_float("obs_noise", defaults.obs_noise),
        attr_noise=section.get_float("attr_noise", defaults.attr_noise),
        revisit_min=section.get_int("revisit_min", defaults.revisit_min),
        revisit_max=section.get_int("revisit_max", defaults.revisit_max),
        target_kind=section.get_str("target_kind", defaults.target_kind),
        seed=section.get_int("seed", _REQUIRED),
    )


def _train_from(section: _Section) -> tuple[TrainConfig, int]:
    defaults = TrainConfig()
    cfg = TrainConfig(
        window_len=section.get_int("window_len", defaults.window_len),
        batch_size=section.get_int("batch_size", defaults.batch_size),
        epochs=section.get_int("epochs", defaults.epochs),
        rho=section.get_float("rho", defaults.rho),
        epsilon=section.get_float("epsilon", defaults.epsilon),
        clip_norm=section.get_float("clip_norm", defaults.clip_norm),
        dropout=section.get_float("dropout", defaults.dropout),
        warmup_steps=section.get_int("warmup_steps", defaults.warmup_steps),
        seed=section.get_int("seed", _REQUIRED),
    )
    hidden_size = section.get_int("hidden_size", 32)
    if hidden_size < 1:
        raise ConfigError("train.hidden_size must be >= 1")
    return cfg, hidden_size


def _experiment_from(section: _Section) -> ExperimentSettings:
    family = section.get_str("family", _REQUIRED)
    if family not in FAMILIES:
        raise ConfigError(
            f"experiment.family must be one of {', '.join(FAMILIES)}, got {family!r}"
        )
    taxonomy = section.get_str("taxonomy", "level2")
    if taxonomy not in TAXONOMY_CHOICES and not taxonomy.endswith(".csv"):
        raise ConfigError(
            "experiment.taxonomy must be builtin, level1, level2, or a .csv path"
        )
    settings = ExperimentSettings(
        family=family,
        rois=section.get_list("rois"),
        taxonomy=taxonomy,
        size_controlled=section.get_bool("size_controlled", False),
        min_roi_sites=section.get_int("min_roi_sites", 10),
        train_start=section.get_date("train_start", _REQUIRED),
        train_end=section.get_date("train_end", _REQUIRED),
        test_start=section.get_date("test_start", _REQUIRED),
        test_end=section.get_date("test_end", _REQUIRED),
        data_seed=section.get_int("data_seed", _REQUIRED),
    )
    if not settings.train_start < settings.train_end <= settings.test_start < settings.test_end:
        raise ConfigError(
            "experiment windows must satisfy "
            "train_start < train_end <= test_start < test_end"
        )
    if settings.size_controlled and settings.family != "similar_dissimilar":
        raise ConfigError("experiment.size_controlled requires family=similar_dissimilar")
    return settings


def load_config(path: str | Path, seed_override: int | None = None) -> Config:
    """Parse and validate a configuration file.

    seed_override, when given, replaces every seed key that is present
    (and satisfies missing ones), for quick multi-seed sweeps.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), strict=True,
        default_section="", interpolation=None,
    )
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    sections: dict[str, _Section] = {}
    for name in parser.sections():
        if name not in _SECTION_KEYS:
            raise ConfigError(f"{path}: unknown section [{name}]")
        raw = dict(parser.items(name))
        unknown = set(raw) - _SECTION_KEYS[name]
        if unknown:
            raise ConfigError(
                f"{path}: unknown key(s) in [{name}]: {', '.join(sorted(unknown))}"
            )
        sections[name] = _Section(name, raw)

    if seed_override is not None:
        for name, key in (("world", "seed"), ("train", "seed"), ("experiment", "data_seed")):
            if name in sections:
                sections[name].raw[key] = str(seed_override)

    try:
        world = _world_from(sections["world"]) if "world" in sections else None
        train_cfg, hidden = (
            _train_from(sections["train"]) if "train" in sections else (None, None)
        )
        experiment = (
            _experiment_from(sections["experiment"]) if "experiment" in sections else None
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    metrics: tuple[str, ...] = tuple(VALID_METRICS)
    if "eval" in sections:
        metrics = sections["eval"].get_list("metrics", VALID_METRICS)
        bad = [m for m in metrics if m not in VALID_METRICS]
        if bad:
            raise ConfigError(f"eval.metrics: unknown metric(s) {', '.join(bad)}")
        if not metrics:
            raise ConfigError("eval.metrics must not be empty")

    workers = os.cpu_count() or 1
    if "io" in sections:
        workers = sections["io"].get_int("workers", workers)
        if workers < 1:
            raise ConfigError("io.workers must be >= 1")

    return Config(
        world=world,
        train=train_cfg,
        hidden_size=hidden,
        experiment=experiment,
        metrics=metrics,
        workers=workers,
    )
