"""Synthetic hierarchical hydrologic world.

Builds a three-level region tree ("S1.2.3" style codes) whose sites share
latent bucket-model parameters through additive per-level offsets, runs a
daily storage/runoff simulation per site, and masks the simulated series
to an irregular revisit schedule with observation noise.  Everything is
keyed off one master seed through per-node random streams, so adding
sites to one region never perturbs another region's data.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from synbench.data import Dataset, Site
from synbench.regions import RegionCode

WORLD_START_DATE = dt.date(2000, 1, 1)
SEASON_DAYS = 365.0

LATENT_NAMES = ("capacity", "recession", "exponent", "evap_eff")

#: Shared latent-parameter means all hierarchical offsets are added to.
BASE_CAPACITY = 80.0
BASE_RECESSION = 0.15
BASE_EXPONENT = 1.8
BASE_EVAP_EFF = 0.6

# stream tags for hierarchical seed derivation
_TAG_L1, _TAG_L2, _TAG_L3, _TAG_SITE, _TAG_FORCING, _TAG_OBSERVE = range(6)


class WorldError(ValueError):
    """Invalid world configuration."""


@dataclass(frozen=True)
class LatentParams:
    """Bucket-model parameters of one site.

    capacity and recession are exposed to the model (with noise) as
    static attributes; exponent and evap_eff stay hidden.
    """

    capacity: float    # storage units, > 0
    recession: float   # 1/day, in (0, 1)
    exponent: float    # dimensionless, >= 1
    evap_eff: float    # dimensionless, in [0, 1]

    def __post_init__(self) -> None:
        if not self.capacity > 0:
            raise WorldError(f"capacity must be > 0, got {self.capacity}")
        if not 0 < self.recession < 1:
            raise WorldError(f"recession must be in (0, 1), got {self.recession}")
        if not self.exponent >= 1:
            raise WorldError(f"exponent must be >= 1, got {self.exponent}")
        if not 0 <= self.evap_eff <= 1:
            raise WorldError(f"evap_eff must be in [0, 1], got {self.evap_eff}")


def _clamp_latent(capacity, recession, exponent, evap_eff) -> LatentParams:
    """Pull raw offset sums back inside the LatentParams invariants."""
    return LatentParams(
        capacity=max(capacity, 1.0),
        recession=min(max(recession, 1e-4), 1.0 - 1e-4),
        exponent=max(exponent, 1.0),
        evap_eff=min(max(evap_eff, 0.0), 1.0),
    )


@dataclass(frozen=True)
class OffsetScales:
    """Std deviations of the per-level additive offsets of one latent parameter."""

    level1: float
    level2: float
    level3: float
    site: float

    def __post_init__(self) -> None:
        for name in ("level1", "level2", "level3", "site"):
            if getattr(self, name) < 0:
                raise WorldError(f"offset scale {name} must be >= 0")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.level1, self.level2, self.level3, self.site)


@dataclass(frozen=True)
class ForcingParams:
    """Knobs of the synthetic daily weather generator."""

    p_wet: float = 0.3          # base wet-day probability
    p_wet_amp: float = 0.12     # seasonal modulation of p_wet
    depth_mean: float = 6.0     # mean wet-day precipitation depth
    depth_amp: float = 0.4      # relative seasonal modulation of depth
    pet_mean: float = 3.0
    pet_amp: float = 2.0
    pet_noise: float = 0.25
    temp_mean: float = 12.0
    temp_amp: float = 10.0
    temp_noise: float = 1.5


@dataclass(frozen=True)
class WorldConfig:
    """Counts, heterogeneity scales, observation model, and the master seed."""

    n_level1: int = 4
    n_level2: int = 3          # per level-1 region
    n_level3: int = 3          # per level-2 region
    sites_per_region: int = 12
    n_days: int = 730
    sigma_capacity: OffsetScales = OffsetScales(18.0, 9.0, 4.0, 2.0)
    sigma_recession: OffsetScales = OffsetScales(0.05, 0.025, 0.01, 0.005)
    sigma_exponent: OffsetScales = OffsetScales(0.12, 0.08, 0.04, 0.02)
    sigma_evap: OffsetScales = OffsetScales(0.05, 0.03, 0.015, 0.008)
    obs_noise: float = 0.04
    attr_noise: float = 0.05
    revisit_min: int = 2
    revisit_max: int = 3
    target_kind: str = "wetness"
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_level1", "n_level2", "n_level3", "sites_per_region", "n_days"):
            if getattr(self, name) < 1:
                raise WorldError(f"{name} must be >= 1")
        if self.obs_noise < 0 or self.attr_noise < 0:
            raise WorldError("noise levels must be >= 0")
        if not 1 <= self.revisit_min <= self.revisit_max <= self.n_days:
            raise WorldError(
                f"revisit range [{self.revisit_min}, {self.revisit_max}] "
                f"must lie within [1, {self.n_days}]"
            )
        if self.target_kind not in ("wetness", "runoff"):
            raise WorldError(f"target_kind must be 'wetness' or 'runoff', got {self.target_kind!r}")

    def sigma_for(self, latent: str) -> OffsetScales:
        return {
            "capacity": self.sigma_capacity,
            "recession": self.sigma_recession,
            "exponent": self.sigma_exponent,
            "evap_eff": self.sigma_evap,
        }[latent]


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def gen_forcing(
    rng: np.random.Generator, n_days: int, params: ForcingParams = ForcingParams()
) -> np.ndarray:
    """Daily (n_days, 3) forcing: precipitation, PET, temperature.

    Wet days occur with a seasonally modulated probability; wet-day depths
    are exponential with a seasonal mean.  PET is a noisy positive sinusoid
    floored at zero; temperature is a noisy sinusoid.
    """
    if n_days < 1:
        raise WorldError("n_days must be >= 1")
    t = np.arange(n_days, dtype=np.float64)
    phase = 2.0 * math.pi * t / SEASON_DAYS
    season = np.sin(phase)

    p_wet = np.clip(params.p_wet + params.p_wet_amp * season, 0.0, 1.0)
    wet = rng.random(n_days) < p_wet
    depth_scale = params.depth_mean * (1.0 + params.depth_amp * season)
    depths = rng.standard_exponential(n_days) * np.maximum(depth_scale, 0.0)
    precip = np.where(wet, depths, 0.0)

    pet = params.pet_mean + params.pet_amp * season
    pet = pet + params.pet_noise * rng.standard_normal(n_days)
    pet = np.maximum(pet, 0.0)

    temp = params.temp_mean + params.temp_amp * season
    temp = temp + params.temp_noise * rng.standard_normal(n_days)

    return np.stack([precip, pet, temp], axis=1)


FEATURE_NAMES = ("precip", "pet", "temp")
ATTR_NAMES = ("capacity", "recession")


def simulate_site(
    latent: LatentParams, forcing: np.ndarray, with_fluxes: bool = False
):
    """Run the daily bucket model over a complete forcing series.

    Per day, with storage S and wetness s = S/C: evaporation is
    evap_eff * pet * s, runoff is recession * C * s**exponent, and the
    balance S + P - E - Q carries over.  Storage above capacity spills
    into the same day's runoff; if outflows would overdraw storage they
    are scaled back proportionally, so mass is conserved exactly.
    Returns (soil_wetness, runoff); wetness is the start-of-day state.
    """
    n_days = forcing.shape[0]
    precip = forcing[:, 0]
    pet = forcing[:, 1]
    cap = latent.capacity
    k = latent.recession
    gamma = latent.exponent
    beta = latent.evap_eff

    wetness = np.empty(n_days)
    runoff = np.empty(n_days)
    evap = np.empty(n_days)
    storage = cap / 2.0
    for i in range(n_days):
        s = storage / cap
        wetness[i] = s
        e = beta * pet[i] * s
        q = k * cap * s**gamma
        available = storage + precip[i]
        out = e + q
        if out > available:
            scale = available / out
            e *= scale
            q *= scale
            nxt = 0.0
        else:
            nxt = available - out
        if nxt > cap:
            q += nxt - cap
            nxt = cap
        runoff[i] = q
        evap[i] = e
        storage = nxt

    if with_fluxes:
        return wetness, runoff, {"evap": evap, "final_storage": storage}
    return wetness, runoff


def observe_target(
    series: np.ndarray,
    revisit: tuple[int, int],
    noise: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mask a daily series to an irregular revisit schedule.

    The first observation falls on day 0; subsequent gaps are drawn
    uniformly from the integer revisit range.  Retained values receive
    additive zero-mean Gaussian noise; all other entries become NaN.
    """
    lo, hi = revisit
    n_days = series.shape[0]
    if not 1 <= lo <= hi:
        raise WorldError(f"invalid revisit range [{lo}, {hi}]")
    kept = []
    t = 0
    while t < n_days:
        kept.append(t)
        t += int(rng.integers(lo, hi + 1))
    out = np.full(n_days, np.nan)
    idx = np.array(kept, dtype=np.intp)
    values = series[idx]
    if noise > 0:
        values = values + noise * rng.standard_normal(idx.size)
    out[idx] = values
    return out


def _node_offsets(cfg: WorldConfig, tag: int, *key: int) -> dict[str, float]:
    """Zero-mean offsets for one region node, one per latent parameter."""
    rng = _stream(cfg.seed, tag, *key)
    draws = rng.standard_normal(len(LATENT_NAMES))
    level = {_TAG_L1: "level1", _TAG_L2: "level2", _TAG_L3: "level3"}[tag]
    return {
        name: float(draws[n] * getattr(cfg.sigma_for(name), level))
        for n, name in enumerate(LATENT_NAMES)
    }


def gen_world(cfg: WorldConfig) -> tuple[Dataset, dict[str, LatentParams]]:
    """Generate the dataset plus the per-site true latent parameters.

    Latents are base + level-1 + level-2 + level-3 offsets + site noise,
    clamped to their invariants.  Noisy capacity and recession become
    static attributes; exponent and evap_eff stay hidden from the model.
    """
    base = {
        "capacity": BASE_CAPACITY,
        "recession": BASE_RECESSION,
        "exponent": BASE_EXPONENT,
        "evap_eff": BASE_EVAP_EFF,
    }
    time_axis = tuple(
        WORLD_START_DATE + dt.timedelta(days=i) for i in range(cfg.n_days)
    )
    sites: list[Site] = []
    latents: dict[str, LatentParams] = {}
    for i in range(1, cfg.n_level1 + 1):
        off1 = _node_offsets(cfg, _TAG_L1, i)
        for j in range(1, cfg.n_level2 + 1):
            off2 = _node_offsets(cfg, _TAG_L2, i, j)
            for k in range(1, cfg.n_level3 + 1):
                off3 = _node_offsets(cfg, _TAG_L3, i, j, k)
                region = RegionCode((f"S{i}", str(j), str(k)))
                for s in range(1, cfg.sites_per_region + 1):
                    site_rng = _stream(cfg.seed, _TAG_SITE, i, j, k, s)
                    site_noise = site_rng.standard_normal(len(LATENT_NAMES))
                    raw = {
                        name: base[name]
                        + off1[name]
                        + off2[name]
                        + off3[name]
                        + float(site_noise[n] * cfg.sigma_for(name).site)
                        for n, name in enumerate(LATENT_NAMES)
                    }
                    latent = _clamp_latent(
                        raw["capacity"], raw["recession"], raw["exponent"], raw["evap_eff"]
                    )
                    attr_eps = site_rng.standard_normal(2)
                    attrs = np.array(
                        [
                            latent.capacity * math.exp(cfg.attr_noise * attr_eps[0]),
                            latent.recession * math.exp(cfg.attr_noise * attr_eps[1]),
                        ]
                    )
                    forcing = gen_forcing(
                        _stream(cfg.seed, _TAG_FORCING, i, j, k, s), cfg.n_days
                    )
                    wetness, runoff = simulate_site(latent, forcing)
                    series = wetness if cfg.target_kind == "wetness" else runoff
                    target = observe_target(
                        series,
                        (cfg.revisit_min, cfg.revisit_max),
                        cfg.obs_noise,
                        _stream(cfg.seed, _TAG_OBSERVE, i, j, k, s),
                    )
                    site_id = f"{region}-{s:03d}"
                    sites.append(
                        Site(
                            site_id=site_id,
                            region=region,
                            static_attrs=attrs,
                            forcing=forcing,
                            target=target,
                        )
                    )
                    latents[site_id] = latent
    dataset = Dataset(tuple(sites), time_axis, FEATURE_NAMES, ATTR_NAMES)
    return dataset, latents


def save_latent_truth(latents: Mapping[str, LatentParams], path: str | Path) -> None:
    """Diagnostics sidecar `site_id,C,k,gamma,beta`; never a training input."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site_id", "C", "k", "gamma", "beta"])
        for site_id, latent in latents.items():
            writer.writerow(
                [
                    site_id,
                    repr(latent.capacity),
                    repr(latent.recession),
                    repr(latent.exponent),
                    repr(latent.evap_eff),
                ]
            )
