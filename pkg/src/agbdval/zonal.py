"""Per-zone raster statistics and the pixel-count filter.

A pixel belongs to a zone when its (projected) centre falls inside the zone,
with shared-edge ties going to the smallest ``zone_id``.  Nodata pixels are
dropped before assignment.  Sums use exactly rounded ``math.fsum`` over the
zone's pixels in row-major order, so results do not depend on the worker
count.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .geom import AlbersSpec, ZoneSet, albers_forward, assign_points
from .grid import Raster, pixel_centers


class ZonalError(ValueError):
    pass


@dataclass(frozen=True)
class ZonalStat:
    zone_id: str
    n_pixels: int
    mean: float | None
    var_of_mean: float | None
    sum: float


@dataclass(frozen=True)
class FilterThreshold:
    t_n: float
    n_bar: float
    sigma_n: float


@dataclass(frozen=True)
class FilterResult:
    retained: list[ZonalStat]
    excluded: list[str]
    thresholds: dict[str, FilterThreshold]


def _valid_centers(r: Raster, projection: AlbersSpec | None):
    flat = np.flatnonzero(r.valid.ravel())
    xs, ys = pixel_centers(r.transform)
    x, y = xs.ravel()[flat], ys.ravel()[flat]
    if r.crs == "geographic":
        if projection is None:
            raise ZonalError("geographic raster needs a projection")
        x, y = albers_forward(x, y, projection)
    return flat, x, y


def pixel_owners(r: Raster, zones: ZoneSet, projection: AlbersSpec | None = None, workers: int | None = 1):
    """Flat indices of valid pixels and the zone index owning each (``-1`` if none)."""
    if zones.crs != "planar":
        raise ZonalError("zones must be planar")
    flat, x, y = _valid_centers(r, projection)
    return flat, assign_points(zones, x, y, workers=workers)


def _stat(zone_id: str, v: np.ndarray) -> ZonalStat:
    n = int(v.size)
    if n == 0:
        return ZonalStat(zone_id, 0, None, None, 0.0)
    total = math.fsum(v)
    mean = total / n
    if n < 2:
        return ZonalStat(zone_id, n, mean, None, total)
    if np.all(v == np.floor(v)) and float(np.abs(v).max()) < 2.0**31:
        # integer-valued pixels: exact rational variance, rounded once
        vi = v.astype(np.int64)
        s1 = int(vi.sum())
        mean = s1 / n
        sq = vi * vi
        s2 = int(sq.sum()) if int(sq.max()) * n < 2**63 else sum(int(q) for q in sq)
        var = float(Fraction(n * s2 - s1 * s1, n * n * (n - 1)))
    else:
        var = math.fsum((v - mean) ** 2) / (n - 1) / n
    return ZonalStat(zone_id, n, mean, var, total)


def zonal_stats(
    r: Raster, zones: ZoneSet, projection: AlbersSpec | None = None, workers: int | None = 1
) -> dict[str, ZonalStat]:
    """Count, mean, variance of the mean (``s**2 / n``) and sum per zone.

    Zones without pixels report ``n_pixels == 0`` and ``None`` statistics.
    """
    flat, owner = pixel_owners(r, zones, projection, workers)
    values = r.values.ravel()[flat]
    order = np.argsort(owner, kind="stable")
    owner_sorted = owner[order]
    bounds = np.searchsorted(owner_sorted, np.arange(len(zones) + 1))
    out = {}
    for k, z in enumerate(zones):
        # stable sort keeps each zone's pixels in row-major order
        out[z.zone_id] = _stat(z.zone_id, values[order[bounds[k]: bounds[k + 1]]])
    return out


def pixel_count_threshold(counts: Sequence[int], ddof: int = 1) -> FilterThreshold:
    """Mean pixel count minus its standard deviation.

    ``ddof=1`` gives the sample standard deviation (default), ``ddof=0``
    the population one.  A single count has zero spread.
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.size == 0:
        raise ZonalError("pixel_count_threshold needs at least one count")
    n_bar = math.fsum(c) / c.size
    if c.size - ddof <= 0:
        sigma = 0.0
    else:
        sigma = math.sqrt(math.fsum((c - n_bar) ** 2) / (c.size - ddof))
    return FilterThreshold(n_bar - sigma, n_bar, sigma)


def filter_zones(
    stats: Iterable[ZonalStat],
    threshold: FilterThreshold | float | Mapping[str, FilterThreshold | float],
    group_of: Callable[[str], str] | None = None,
) -> FilterResult:
    """Keep zones whose pixel count is not below the threshold.

    ``threshold`` may be a single threshold or a mapping from group key to
    threshold, with ``group_of`` mapping a zone id to its group.
    """
    stats = list(stats)
    retained, excluded = [], []
    for s in stats:
        if isinstance(threshold, Mapping):
            t = threshold[group_of(s.zone_id) if group_of else ""]
        else:
            t = threshold
        t_n = t.t_n if isinstance(t, FilterThreshold) else float(t)
        if s.n_pixels >= t_n:
            retained.append(s)
        else:
            excluded.append(s.zone_id)
    thresholds = dict(threshold) if isinstance(threshold, Mapping) else {}
    return FilterResult(retained, excluded, thresholds)


def grouped_thresholds(
    stats: Iterable[ZonalStat], group_of: Callable[[str], str], ddof: int = 1
) -> dict[str, FilterThreshold]:
    """One pixel-count threshold per group of zones (e.g. per state)."""
    counts: dict[str, list[int]] = defaultdict(list)
    for s in stats:
        counts[group_of(s.zone_id)].append(s.n_pixels)
    return {g: pixel_count_threshold(c, ddof) for g, c in sorted(counts.items())}


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".9g")


def write_zonal_csv(stats: Iterable[ZonalStat], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone_id", "n_pixels", "mean", "var_of_mean", "sum"])
        for s in stats:
            w.writerow([s.zone_id, s.n_pixels, _fmt(s.mean), _fmt(s.var_of_mean), _fmt(s.sum)])


def read_zone_variances(path: str | Path) -> dict[str, float]:
    """User-supplied per-zone variances of the predicted mean (``zone_id,var_of_mean``)."""
    out = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"zone_id", "var_of_mean"} <= set(reader.fieldnames):
            raise ZonalError("row 1: variance CSV needs columns zone_id,var_of_mean")
        for i, row in enumerate(reader, start=2):
            if not (row["var_of_mean"] or "").strip():
                continue  # undefined variance (fewer than two pixels)
            try:
                v = float(row["var_of_mean"])
            except ValueError:
                raise ZonalError(f"row {i}: var_of_mean not numeric") from None
            if not v >= 0:
                raise ZonalError(f"row {i}: var_of_mean must be >= 0")
            out[row["zone_id"]] = v
    return out
