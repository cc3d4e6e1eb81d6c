"""Sites, datasets, normalization statistics, and CSV ingestion.

A dataset is a fixed universe of sites sharing one daily time axis.
Forcing inputs are always complete; targets may have gaps, represented
in memory as NaN and on disk as the literal token `NA`.  Datasets are
immutable once built; every transformation returns a new dataset.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from synbench.regions import RegionCode, parse_region_code

MISSING_TOKEN = "NA"

SITES_FILE = "sites.csv"
FORCING_FILE = "forcing.csv"
TARGET_FILE = "target.csv"


class DataError(ValueError):
    """Schema or consistency violation in dataset contents or files."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Site:
    """One prediction unit: static attributes, forcing series, gappy target."""

    site_id: str
    region: RegionCode
    static_attrs: np.ndarray  # (A,)
    forcing: np.ndarray       # (T, F), complete
    target: np.ndarray        # (T,), NaN marks missing

    def __post_init__(self) -> None:
        object.__setattr__(self, "static_attrs", _readonly(self.static_attrs))
        object.__setattr__(self, "forcing", _readonly(self.forcing))
        object.__setattr__(self, "target", _readonly(self.target))
        if self.forcing.ndim != 2:
            raise DataError(f"site {self.site_id}: forcing must be 2-D (T, F)")
        if self.target.ndim != 1 or self.target.shape[0] != self.forcing.shape[0]:
            raise DataError(f"site {self.site_id}: target length must match forcing")
        if self.static_attrs.ndim != 1:
            raise DataError(f"site {self.site_id}: static_attrs must be 1-D")
        if not np.isfinite(self.forcing).all():
            raise DataError(f"site {self.site_id}: forcing must have no missing entries")
        if self.region.depth != 3:
            raise DataError(f"site {self.site_id}: region {self.region} is not level-III")

    @property
    def n_observed(self) -> int:
        return int(np.isfinite(self.target).sum())


@dataclass(frozen=True)
class Dataset:
    """Sites on a shared daily time axis with named features and attributes."""

    sites: tuple[Site, ...]
    time_axis: tuple[dt.date, ...]
    feature_names: tuple[str, ...]
    attr_names: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "time_axis", tuple(self.time_axis))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "attr_names", tuple(self.attr_names))
        ids = [s.site_id for s in self.sites]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise DataError(f"duplicate site id {dup!r}")
        T, F, A = len(self.time_axis), len(self.feature_names), len(self.attr_names)
        for site in self.sites:
            if site.forcing.shape != (T, F):
                raise DataError(
                    f"site {site.site_id}: forcing shape {site.forcing.shape} "
                    f"does not match dataset ({T}, {F})"
                )
            if site.static_attrs.shape != (A,):
                raise DataError(
                    f"site {site.site_id}: expected {A} static attributes, "
                    f"got {site.static_attrs.shape[0]}"
                )

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_days(self) -> int:
        return len(self.time_axis)

    def site_ids(self) -> tuple[str, ...]:
        return tuple(s.site_id for s in self.sites)

    def site(self, site_id: str) -> Site:
        for s in self.sites:
            if s.site_id == site_id:
                return s
        raise DataError(f"no site {site_id!r} in dataset")

    def forcing_tensor(self) -> np.ndarray:
        """(S, T, F) stack of all sites' forcing."""
        return np.stack([s.forcing for s in self.sites])

    def attr_matrix(self) -> np.ndarray:
        """(S, A) stack of all sites' static attributes."""
        return np.stack([s.static_attrs for s in self.sites])

    def target_matrix(self) -> np.ndarray:
        """(S, T) stack of all sites' targets, NaN where missing."""
        return np.stack([s.target for s in self.sites])


@dataclass(frozen=True)
class NormStats:
    """Per-feature standardization moments fitted on training data.

    Population (N-denominator) moments; zero-variance features are stored
    with deviation 1 so standardization is always defined.
    """

    forcing_mean: np.ndarray  # (F,)
    forcing_std: np.ndarray   # (F,)
    attr_mean: np.ndarray     # (A,)
    attr_std: np.ndarray      # (A,)
    target_mean: float
    target_std: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "forcing_mean", _readonly(self.forcing_mean))
        object.__setattr__(self, "forcing_std", _readonly(self.forcing_std))
        object.__setattr__(self, "attr_mean", _readonly(self.attr_mean))
        object.__setattr__(self, "attr_std", _readonly(self.attr_std))
        if (self.forcing_std <= 0).any() or (self.attr_std <= 0).any() or self.target_std <= 0:
            raise DataError("all stored standard deviations must be strictly positive")


def _safe_std(values: np.ndarray, axis=None) -> np.ndarray:
    std = np.std(values, axis=axis)
    return np.where(std == 0.0, 1.0, std)


def fit_normalization(train: Dataset) -> NormStats:
    """Population mean/deviation per forcing feature, attribute, and target.

    Target moments use non-missing entries only.  Raises DataError on an
    empty dataset or a dataset with no observed target at all.
    """
    if train.n_sites == 0:
        raise DataError("cannot fit normalization on an empty dataset")
    forcing = train.forcing_tensor().reshape(-1, len(train.feature_names))
    attrs = train.attr_matrix()
    targets = train.target_matrix()
    observed = targets[np.isfinite(targets)]
    if observed.size == 0:
        raise DataError("cannot fit normalization: no observed target values")
    return NormStats(
        forcing_mean=forcing.mean(axis=0),
        forcing_std=_safe_std(forcing, axis=0),
        attr_mean=attrs.mean(axis=0),
        attr_std=_safe_std(attrs, axis=0),
        target_mean=float(observed.mean()),
        target_std=float(_safe_std(observed)),
    )


def apply_normalization(ds: Dataset, stats: NormStats) -> Dataset:
    """Standardize every value as (value - mean) / deviation; NaN stays NaN."""
    F, A = len(ds.feature_names), len(ds.attr_names)
    if stats.forcing_mean.shape != (F,) or stats.attr_mean.shape != (A,):
        raise DataError(
            f"normalization stats shaped for F={stats.forcing_mean.shape[0]}, "
            f"A={stats.attr_mean.shape[0]}; dataset has F={F}, A={A}"
        )
    sites = tuple(
        Site(
            site_id=s.site_id,
            region=s.region,
            static_attrs=(s.static_attrs - stats.attr_mean) / stats.attr_std,
            forcing=(s.forcing - stats.forcing_mean) / stats.forcing_std,
            target=(s.target - stats.target_mean) / stats.target_std,
        )
        for s in ds.sites
    )
    return Dataset(sites, ds.time_axis, ds.feature_names, ds.attr_names)


def denormalize_target(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Map standardized target values back to physical units."""
    return values * stats.target_std + stats.target_mean


def subset_by_region(ds: Dataset, predicate: Callable[[RegionCode], bool]) -> Dataset:
    """Keep sites whose region satisfies the predicate; order preserved."""
    sites = tuple(s for s in ds.sites if predicate(s.region))
    return Dataset(sites, ds.time_axis, ds.feature_names, ds.attr_names)


def subset_by_ids(ds: Dataset, ids: Iterable[str]) -> Dataset:
    """Keep the listed sites, in dataset order. Unknown ids raise."""
    wanted = set(ids)
    unknown = wanted - set(ds.site_ids())
    if unknown:
        raise DataError(f"unknown site ids: {sorted(unknown)}")
    sites = tuple(s for s in ds.sites if s.site_id in wanted)
    return Dataset(sites, ds.time_axis, ds.feature_names, ds.attr_names)


def slice_time(ds: Dataset, start: dt.date, end: dt.date) -> Dataset:
    """Restrict to the half-open date window [start, end)."""
    idx = [i for i, d in enumerate(ds.time_axis) if start <= d < end]
    if not idx:
        raise DataError(f"window [{start}, {end}) does not intersect the time axis")
    lo, hi = idx[0], idx[-1] + 1
    if idx != list(range(lo, hi)):
        raise DataError("time axis is not sorted; cannot slice by date")
    sites = tuple(
        Site(s.site_id, s.region, s.static_attrs, s.forcing[lo:hi], s.target[lo:hi])
        for s in ds.sites
    )
    return Dataset(sites, ds.time_axis[lo:hi], ds.feature_names, ds.attr_names)


# ---------------------------------------------------------------------------
# CSV ingestion and canonical persistence


def _fmt(value: float) -> str:
    """Canonical float rendering: shortest string that round-trips."""
    return repr(float(value))


def _parse_float(token: str, where: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"{where}: non-numeric cell {token!r}") from None
    if not np.isfinite(value):
        raise DataError(f"{where}: non-finite cell {token!r}")
    return value


def _parse_date(token: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(token)
    except ValueError:
        raise DataError(f"{where}: invalid ISO date {token!r}") from None


def _read_rows(path: Path, expected_prefix: Sequence[str]) -> tuple[list[str], list[tuple[int, list[str]]]]:
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}:1: empty file")
        prefix = [h.strip() for h in header[: len(expected_prefix)]]
        if prefix != list(expected_prefix):
            raise DataError(
                f"{path}:1: header must start with {','.join(expected_prefix)}, "
                f"got {','.join(header)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                )
            rows.append((lineno, row))
    return header, rows


def load_dataset(directory: str | Path) -> Dataset:
    """Load sites.csv, forcing.csv, and target.csv from a directory.

    Validates the full schema: unique site ids, level-III regions, one
    shared time axis with complete forcing per site, and target dates
    within the axis.  Errors carry file and line.
    """
    directory = Path(directory)
    sites_path = directory / SITES_FILE
    forcing_path = directory / FORCING_FILE
    target_path = directory / TARGET_FILE

    header, rows = _read_rows(sites_path, ["site_id", "region"])
    attr_names = tuple(h.strip() for h in header[2:])
    site_order: list[str] = []
    regions: dict[str, RegionCode] = {}
    attrs: dict[str, np.ndarray] = {}
    for lineno, row in rows:
        site_id = row[0].strip()
        if site_id in regions:
            raise DataError(f"{sites_path}:{lineno}: duplicate site id {site_id!r}")
        try:
            region = parse_region_code(row[1].strip())
        except Exception as exc:
            raise DataError(f"{sites_path}:{lineno}: {exc}") from None
        if region.depth != 3:
            raise DataError(
                f"{sites_path}:{lineno}: region {region} is not a level-III code"
            )
        site_order.append(site_id)
        regions[site_id] = region
        attrs[site_id] = np.array(
            [_parse_float(v, f"{sites_path}:{lineno}") for v in row[2:]], dtype=np.float64
        )
    if not site_order:
        raise DataError(f"{sites_path}: no sites defined")

    header, rows = _read_rows(forcing_path, ["site_id", "date"])
    feature_names = tuple(h.strip() for h in header[2:])
    if not feature_names:
        raise DataError(f"{forcing_path}:1: no forcing feature columns")
    forcing_rows: dict[str, list[tuple[dt.date, np.ndarray]]] = {s: [] for s in site_order}
    for lineno, row in rows:
        site_id = row[0].strip()
        if site_id not in forcing_rows:
            raise DataError(f"{forcing_path}:{lineno}: unknown site id {site_id!r}")
        where = f"{forcing_path}:{lineno}"
        date = _parse_date(row[1].strip(), where)
        values = np.array([_parse_float(v, where) for v in row[2:]], dtype=np.float64)
        forcing_rows[site_id].append((date, values))

    time_axis: tuple[dt.date, ...] | None = None
    for site_id in site_order:
        entries = forcing_rows[site_id]
        if not entries:
            raise DataError(f"{forcing_path}: no forcing rows for site {site_id!r}")
        dates = tuple(d for d, _ in entries)
        if len(set(dates)) != len(dates):
            raise DataError(f"{forcing_path}: duplicate dates for site {site_id!r}")
        if list(dates) != sorted(dates):
            raise DataError(f"{forcing_path}: dates for site {site_id!r} not ascending")
        if time_axis is None:
            time_axis = dates
        elif dates != time_axis:
            raise DataError(
                f"{forcing_path}: site {site_id!r} has a different time axis "
                f"({len(dates)} rows vs {len(time_axis)}); axis must be shared"
            )
    assert time_axis is not None
    date_index = {d: i for i, d in enumerate(time_axis)}

    header, rows = _read_rows(target_path, ["site_id", "date", "value"])
    if len(header) != 3:
        raise DataError(f"{target_path}:1: expected exactly 3 columns")
    targets = {s: np.full(len(time_axis), np.nan) for s in site_order}
    seen: set[tuple[str, dt.date]] = set()
    for lineno, row in rows:
        site_id = row[0].strip()
        if site_id not in targets:
            raise DataError(f"{target_path}:{lineno}: unknown site id {site_id!r}")
        where = f"{target_path}:{lineno}"
        date = _parse_date(row[1].strip(), where)
        if date not in date_index:
            raise DataError(f"{where}: date {date} outside the forcing time axis")
        if (site_id, date) in seen:
            raise DataError(f"{where}: duplicate target row for {site_id!r} {date}")
        seen.add((site_id, date))
        token = row[2].strip()
        if token != MISSING_TOKEN:
            targets[site_id][date_index[date]] = _parse_float(token, where)

    sites = tuple(
        Site(
            site_id=site_id,
            region=regions[site_id],
            static_attrs=attrs[site_id],
            forcing=np.stack([v for _, v in forcing_rows[site_id]]),
            target=targets[site_id],
        )
        for site_id in site_order
    )
    return Dataset(sites, time_axis, feature_names, attr_names)


def save_dataset(ds: Dataset, directory: str | Path) -> None:
    """Write the canonical three-file CSV form (dense target rows, `NA` gaps)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    with open(directory / SITES_FILE, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site_id", "region", *ds.attr_names])
        for s in ds.sites:
            writer.writerow([s.site_id, str(s.region), *(_fmt(v) for v in s.static_attrs)])

    with open(directory / FORCING_FILE, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site_id", "date", *ds.feature_names])
        for s in ds.sites:
            for t, date in enumerate(ds.time_axis):
                writer.writerow([s.site_id, date.isoformat(), *(_fmt(v) for v in s.forcing[t])])

    with open(directory / TARGET_FILE, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site_id", "date", "value"])
        for s in ds.sites:
            for t, date in enumerate(ds.time_axis):
                v = s.target[t]
                token = MISSING_TOKEN if not np.isfinite(v) else _fmt(v)
                writer.writerow([s.site_id, date.isoformat(), token])
