"""Plot ingestion and design-based estimation of unit means.

Per-unit estimates are built from plot AGBD values grouped by stratum.  The
default variance of the post-stratified mean is the stratified-sampling form

    v = sum_h W_h**2 * s_h**2 / n_h

with the Bechtold & Patterson post-stratification variance available as an
alternative (``variance="bechtold_patterson"``).
"""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np

from .geom import AlbersSpec, ZoneSet, albers_forward, assign_points

PLOT_COLUMNS = ("plot_id", "lon", "lat", "measure_year", "agbd_mg_ha", "stratum_id", "unit_id")
WEIGHT_COLUMNS = ("unit_id", "stratum_id", "weight")
UNASSIGNED = "_unassigned"

SRS = "SRS"
POST_STRATIFIED = "POST_STRATIFIED"


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class PlotRecord:
    plot_id: str
    lon: float
    lat: float
    measure_year: int
    agbd: float
    stratum_id: str = ""
    unit_id: str = ""

    def __post_init__(self):
        if not self.agbd >= 0:
            raise DesignError(f"plot {self.plot_id}: agbd must be >= 0, got {self.agbd}")
        if not 1900 <= self.measure_year <= 2100:
            raise DesignError(f"plot {self.plot_id}: measure_year {self.measure_year} outside [1900, 2100]")


@dataclass(frozen=True)
class DesignEstimate:
    unit_id: str
    mean: float
    var_of_mean: float
    n_plots: int
    method: str


def _open(src) -> IO[str]:
    if isinstance(src, (str, Path)) and not (isinstance(src, str) and "\n" in src):
        return open(src, "r", encoding="utf-8", newline="")
    if isinstance(src, str):
        return io.StringIO(src)
    return src


def _read_rows(src, required: Sequence[str]):
    fh = _open(src)
    try:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise DesignError(f"row 1: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        # header is file row 1
        for i, row in enumerate(reader, start=2):
            yield i, row
    finally:
        if fh is not src:
            fh.close()


def _number(row: dict, col: str, i: int, label: str | None = None) -> float:
    raw = (row.get(col) or "").strip()
    label = label or col
    if raw == "":
        raise DesignError(f"row {i}: {label} missing")
    try:
        value = float(raw)
    except ValueError:
        raise DesignError(f"row {i}: {label} not numeric") from None
    if not math.isfinite(value):
        raise DesignError(f"row {i}: {label} not finite")
    return value


def load_plots(src: Union[str, Path, IO[str]]) -> list[PlotRecord]:
    """Read the plots CSV (``plot_id,lon,lat,measure_year,agbd_mg_ha,stratum_id,unit_id``).

    Rows are numbered as file lines, so the first data row is row 2.
    """
    plots = []
    for i, row in _read_rows(src, PLOT_COLUMNS):
        year = _number(row, "measure_year", i)
        if year != int(year):
            raise DesignError(f"row {i}: measure_year not an integer")
        lon = _number(row, "lon", i)
        lat = _number(row, "lat", i)
        agbd = _number(row, "agbd_mg_ha", i, label="agbd")
        try:
            plots.append(
                PlotRecord(
                    plot_id=row["plot_id"].strip(),
                    lon=lon,
                    lat=lat,
                    measure_year=int(year),
                    agbd=agbd,
                    stratum_id=(row.get("stratum_id") or "").strip(),
                    unit_id=(row.get("unit_id") or "").strip(),
                )
            )
        except DesignError as exc:
            raise DesignError(f"row {i}: {exc}") from None
    return plots


def write_plots(plots: Iterable[PlotRecord], dst: Union[str, Path]) -> None:
    with open(dst, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for p in plots:
            w.writerow([p.plot_id, repr(p.lon), repr(p.lat), p.measure_year, repr(p.agbd), p.stratum_id, p.unit_id])


def load_weights(src: Union[str, Path, IO[str]]) -> dict[str, dict[str, float]]:
    """Read stratum weights as ``{unit_id: {stratum_id: weight}}``; sums are checked."""
    out: dict[str, dict[str, float]] = defaultdict(dict)
    for i, row in _read_rows(src, WEIGHT_COLUMNS):
        unit, stratum = row["unit_id"].strip(), row["stratum_id"].strip()
        w = _number(row, "weight", i)
        if w < 0:
            raise DesignError(f"row {i}: weight must be >= 0")
        if stratum in out[unit]:
            raise DesignError(f"row {i}: duplicate weight for unit {unit!r} stratum {stratum!r}")
        out[unit][stratum] = w
    for unit, ws in out.items():
        total = math.fsum(ws.values())
        if abs(total - 1.0) > 1e-9:
            raise DesignError(f"unit {unit!r}: stratum weights sum to {total}, expected 1")
    return dict(out)


def filter_years(plots: Iterable[PlotRecord], year_window: tuple[int, int] | None) -> list[PlotRecord]:
    if year_window is None:
        return list(plots)
    lo, hi = year_window
    return [p for p in plots if lo <= p.measure_year <= hi]


def _mean_var(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    mean = math.fsum(v) / v.size
    s2 = math.fsum((v - mean) ** 2) / (v.size - 1)
    return mean, s2


def srs_estimate(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and variance of the mean, ``s**2 / n``."""
    n = len(values)
    if n == 0:
        raise DesignError("cannot estimate from an empty sample")
    if n == 1:
        raise DesignError("variance undefined for a single plot")
    mean, s2 = _mean_var(values)
    return mean, s2 / n


def post_stratified_estimate(
    groups: Mapping[str, Sequence[float]],
    weights: Mapping[str, float],
    unit_id: str = "",
    variance: str = "stratified",
) -> DesignEstimate:
    """Post-stratified mean ``sum W_h ybar_h`` and its variance.

    ``groups`` maps stratum id to plot values; every stratum carrying
    positive weight needs at least two plots.
    """
    unknown = sorted(set(groups) - set(weights))
    if unknown:
        raise DesignError(f"unit {unit_id!r}: plots in stratum not in weights: {unknown}")
    short = sorted(h for h, w in weights.items() if w > 0 and len(groups.get(h, ())) < 2)
    if short:
        raise DesignError(f"unit {unit_id!r}: stratum needs >= 2 plots: {short}")
    total_w = math.fsum(weights.values())
    if abs(total_w - 1.0) > 1e-9:
        raise DesignError(f"unit {unit_id!r}: weights sum to {total_w}, expected 1")

    strata = sorted(h for h, w in weights.items() if w > 0)
    n_total = sum(len(groups.get(h, ())) for h in groups)
    means, s2s, ns = {}, {}, {}
    for h in strata:
        means[h], s2s[h] = _mean_var(groups[h])
        ns[h] = len(groups[h])

    mean = math.fsum(weights[h] * means[h] for h in strata)
    if variance == "stratified":
        var = math.fsum(weights[h] ** 2 * s2s[h] / ns[h] for h in strata)
    elif variance == "bechtold_patterson":
        n = sum(ns.values())
        var = math.fsum(weights[h] * s2s[h] for h in strata) / n + math.fsum(
            (1.0 - weights[h]) * s2s[h] for h in strata
        ) / n**2
    else:
        raise DesignError(f"unknown variance estimator {variance!r}")
    method = SRS if len(strata) == 1 and set(groups) <= set(strata) else POST_STRATIFIED
    return DesignEstimate(unit_id, mean, var, n_total, method)


def estimate_unit(
    plots: Sequence[PlotRecord],
    unit_id: str,
    weights: Mapping[str, float] | None = None,
    variance: str = "stratified",
) -> DesignEstimate:
    """SRS estimate when no weights are given, post-stratified otherwise."""
    if not weights:
        mean, v = srs_estimate([p.agbd for p in plots])
        return DesignEstimate(unit_id, mean, v, len(plots), SRS)
    groups: dict[str, list[float]] = defaultdict(list)
    for p in plots:
        groups[p.stratum_id].append(p.agbd)
    return post_stratified_estimate(groups, weights, unit_id=unit_id, variance=variance)


def project_plots(plots: Sequence[PlotRecord], projection: AlbersSpec) -> tuple[np.ndarray, np.ndarray]:
    if not plots:
        return np.empty(0), np.empty(0)
    lon = np.array([p.lon for p in plots])
    lat = np.array([p.lat for p in plots])
    return albers_forward(lon, lat, projection)


def assign_plots_to_zones(
    plots: Sequence[PlotRecord], zones: ZoneSet, projection: AlbersSpec = AlbersSpec()
) -> dict[str, list[PlotRecord]]:
    """Group plots by the zone containing their projected location.

    Keys follow zone order; plots outside every zone are collected under
    ``"_unassigned"`` (always present).  Plot order within a group follows
    input order.
    """
    x, y = project_plots(plots, projection)
    owner = assign_points(zones, x, y)
    out: dict[str, list[PlotRecord]] = {z.zone_id: [] for z in zones}
    out[UNASSIGNED] = []
    ids = zones.ids
    for p, k in zip(plots, owner):
        out[ids[k] if k >= 0 else UNASSIGNED].append(p)
    return out
