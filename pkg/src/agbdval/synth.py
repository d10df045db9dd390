"""Synthetic landscapes with known truth, standing in for real map/plot data.

Every random draw comes from a named stream derived from ``(seed, stream)``,
so changing one component (say the plot noise) never shifts the draws of
another (say the pixel noise).
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .design import PlotRecord, assign_plots_to_zones, project_plots, srs_estimate, write_plots
from .agreement import PairedUnit, unit_t_statistic
from .geom import AlbersSpec, ZoneSet, albers_inverse, assign_points, tessellate_hexagons, write_zones
from .grid import GridTransform, Raster, pixel_centers, write_ascii_grid
from .zonal import pixel_owners, zonal_stats

_STREAMS = {"bumps": 1, "pixel_noise": 2, "plots": 3, "plot_noise": 4, "fuzz": 5, "swap": 6, "calibration": 7}

FOREST = "forest"
NONFOREST = "nonforest"


def rng_for(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAMS[stream]])


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    rows: int = 200
    cols: int = 200
    cell: float = 250.0
    x_ll: float = -1_400_000.0
    y_ll: float = 1_900_000.0
    # constant | gradient | lumpy
    field_model: str = "lumpy"
    base: float = 60.0
    slope_x: float = 0.0
    slope_y: float = 0.0
    bump_count: tuple[int, int] = (4, 8)
    bump_amplitude: tuple[float, float] = (40.0, 200.0)
    bump_width: tuple[float, float] = (4_000.0, 12_000.0)
    pixel_noise_sd: float = 0.0
    # plots per hectare; one plot per 2,400 ha by default
    plot_density: float = 1.0 / 2400.0
    plot_noise_sd: float = 0.0
    stratum_threshold: float = 10.0
    fuzz_radius: tuple[float, float] = (800.0, 1500.0)
    swap_fraction: float = 0.2
    measure_year: int = 2020
    projection: AlbersSpec = field(default_factory=AlbersSpec)

    def __post_init__(self):
        if self.field_model not in ("constant", "gradient", "lumpy"):
            raise ValueError(f"unknown field model {self.field_model!r}")
        if self.pixel_noise_sd < 0 or self.plot_noise_sd < 0:
            raise ValueError("noise sds must be >= 0")
        if not 0.0 <= self.swap_fraction <= 1.0:
            raise ValueError("swap_fraction must lie in [0, 1]")
        lo, hi = self.fuzz_radius
        if not 0 <= lo <= hi:
            raise ValueError("fuzz_radius must satisfy 0 <= lo <= hi")

    @property
    def transform(self) -> GridTransform:
        return GridTransform(self.x_ll, self.y_ll, self.cell, self.rows, self.cols)

    @property
    def area_ha(self) -> float:
        return self.rows * self.cols * self.cell * self.cell / 1e4


@dataclass(frozen=True, eq=False)
class TruthField:
    """Noise-free AGBD, as a closed-form function and sampled at pixel centres."""

    cfg: SynthConfig
    bumps: np.ndarray  # (k, 4): x, y, amplitude, width
    raster: Raster

    def value_at(self, x, y) -> np.ndarray:
        cfg = self.cfg
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if cfg.field_model == "constant":
            v = np.full(np.broadcast(x, y).shape, cfg.base)
        else:
            v = cfg.base + cfg.slope_x * (x - cfg.x_ll) + cfg.slope_y * (y - cfg.y_ll)
            for bx, by, amp, width in self.bumps:
                v = v + amp * np.exp(-((x - bx) ** 2 + (y - by) ** 2) / (2.0 * width * width))
        return np.maximum(v, 0.0)

    def stratum(self, values) -> np.ndarray:
        return np.where(np.asarray(values) < self.cfg.stratum_threshold, NONFOREST, FOREST)


def _bumps(cfg: SynthConfig) -> np.ndarray:
    if cfg.field_model != "lumpy":
        return np.empty((0, 4))
    rng = rng_for(cfg.seed, "bumps")
    k = int(rng.integers(cfg.bump_count[0], cfg.bump_count[1] + 1))
    xmin, ymin, xmax, ymax = cfg.transform.bounds
    return np.column_stack(
        [
            rng.uniform(xmin, xmax, k),
            rng.uniform(ymin, ymax, k),
            rng.uniform(*cfg.bump_amplitude, k),
            rng.uniform(*cfg.bump_width, k),
        ]
    )


def generate_field(cfg: SynthConfig) -> tuple[Raster, TruthField]:
    """Truth at pixel centres plus i.i.d. Gaussian pixel noise, clamped at 0."""
    t = cfg.transform
    bumps = _bumps(cfg)
    xs, ys = pixel_centers(t)
    proto = TruthField(cfg, bumps, None)  # type: ignore[arg-type]
    truth_vals = proto.value_at(xs, ys)
    truth = TruthField(cfg, bumps, Raster(t, truth_vals, crs="planar"))
    if cfg.pixel_noise_sd > 0:
        noise = rng_for(cfg.seed, "pixel_noise").normal(0.0, cfg.pixel_noise_sd, t.shape)
        vals = np.maximum(truth_vals + noise, 0.0)
    else:
        vals = truth_vals
    return Raster(t, vals, crs="planar"), truth


def sample_plots(truth: TruthField, cfg: SynthConfig | None = None) -> list[PlotRecord]:
    """Poisson number of plots placed uniformly over the domain.

    Plot AGBD is the truth at the plot location plus Gaussian noise, clamped
    at 0; ``unit_id`` is left blank.
    """
    cfg = cfg or truth.cfg
    if not cfg.plot_density > 0:
        raise ValueError("plot_density must be > 0")
    rng = rng_for(cfg.seed, "plots")
    n = int(rng.poisson(cfg.plot_density * cfg.area_ha))
    xmin, ymin, xmax, ymax = cfg.transform.bounds
    x = rng.uniform(xmin, xmax, n)
    y = rng.uniform(ymin, ymax, n)
    true_v = truth.value_at(x, y)
    if cfg.plot_noise_sd > 0:
        agbd = np.maximum(true_v + rng_for(cfg.seed, "plot_noise").normal(0.0, cfg.plot_noise_sd, n), 0.0)
    else:
        agbd = true_v
    strata = truth.stratum(true_v)
    lon, lat = albers_inverse(x, y, cfg.projection)
    width = max(6, len(str(n)))
    return [
        PlotRecord(f"p{i:0{width}d}", float(lon[i]), float(lat[i]), cfg.measure_year, float(agbd[i]), str(strata[i]), "")
        for i in range(n)
    ]


def fuzz_and_swap(plots: Sequence[PlotRecord], cfg: SynthConfig) -> list[PlotRecord]:
    """Perturb plot coordinates the way inventory privacy rules do.

    Each plot moves by a uniformly oriented planar vector whose length is
    uniform in ``cfg.fuzz_radius``; then within every ``unit_id``,
    ``floor(swap_fraction * n_unit / 2)`` disjoint pairs trade coordinates.
    """
    n = len(plots)
    if n == 0:
        return []
    proj = cfg.projection
    x, y = project_plots(plots, proj)
    lo, hi = cfg.fuzz_radius
    if hi > 0:
        rng = rng_for(cfg.seed, "fuzz")
        angle = rng.uniform(0.0, 2.0 * math.pi, n)
        dist = rng.uniform(lo, hi, n)
        x = x + dist * np.cos(angle)
        y = y + dist * np.sin(angle)
        lon, lat = albers_inverse(x, y, proj)
    else:
        lon = np.array([p.lon for p in plots])
        lat = np.array([p.lat for p in plots])

    by_unit: dict[str, list[int]] = defaultdict(list)
    for i, p in enumerate(plots):
        by_unit[p.unit_id].append(i)
    rng = rng_for(cfg.seed, "swap")
    lon, lat = lon.copy(), lat.copy()
    for unit in sorted(by_unit):
        idx = by_unit[unit]
        k = int(math.floor(cfg.swap_fraction * len(idx) / 2.0))
        if k == 0:
            continue
        chosen = rng.permutation(len(idx))[: 2 * k]
        for a, b in zip(chosen[0::2], chosen[1::2]):
            ia, ib = idx[a], idx[b]
            lon[ia], lon[ib] = lon[ib], lon[ia]
            lat[ia], lat[ib] = lat[ib], lat[ia]
    return [replace(p, lon=float(lon[i]), lat=float(lat[i])) for i, p in enumerate(plots)]


def crossing_fraction(
    original: Sequence[PlotRecord], perturbed: Sequence[PlotRecord], zones: ZoneSet, projection: AlbersSpec = AlbersSpec()
) -> float:
    """Share of plots whose owning zone changed under perturbation."""
    if len(original) != len(perturbed):
        raise ValueError("original and perturbed plot lists differ in length")
    if not original:
        return 0.0
    before = assign_points(zones, *project_plots(original, projection))
    after = assign_points(zones, *project_plots(perturbed, projection))
    return float(np.mean(before != after))


def true_zone_means(truth: TruthField, zones: ZoneSet) -> dict[str, float | None]:
    """Average truth over the pixel centres each zone owns."""
    return {zid: s.mean for zid, s in zonal_stats(truth.raster, zones).items()}


def stratum_weights(truth: TruthField, zones: ZoneSet) -> dict[str, dict[str, float]]:
    """Forest / non-forest area shares per zone from the truth raster."""
    flat, owner = pixel_owners(truth.raster, zones)
    forest = truth.raster.values.ravel()[flat] >= truth.cfg.stratum_threshold
    out = {}
    for k, z in enumerate(zones):
        mine = owner == k
        n = int(mine.sum())
        if n == 0:
            continue
        f = int(forest[mine].sum()) / n
        out[z.unit_id] = {FOREST: f, NONFOREST: 1.0 - f}
    return out


def simulate_t_calibration(
    n_units: int = 10_000,
    n_pixels: int = 400,
    n_plots: int = 60,
    pixel_sd: float = 20.0,
    plot_sd: float = 40.0,
    truth_range: tuple[float, float] = (50.0, 300.0),
    seed: int = 42,
) -> np.ndarray:
    """t statistics for units sharing a true mean, with independent noise per side."""
    rng = rng_for(seed, "calibration")
    mu = rng.uniform(*truth_range, n_units)
    pix = mu[:, None] + rng.normal(0.0, pixel_sd, (n_units, n_pixels))
    plots = mu[:, None] + rng.normal(0.0, plot_sd, (n_units, n_plots))
    t = np.empty(n_units)
    for i in range(n_units):
        pm, pv = srs_estimate(pix[i])
        rm, rv = srs_estimate(plots[i])
        t[i] = unit_t_statistic(PairedUnit(str(i), pm, pv, rm, rv))
    return t


def write_synthetic_bundle(cfg: SynthConfig, out_dir: str | Path, hex_area: float = 6.4e8) -> dict[str, Path]:
    """Write raster, plots, weights, zones and truth files for a landscape.

    Plots get the id of the zone containing their true location as
    ``unit_id`` before fuzzing and swapping.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raster, truth = generate_field(cfg)
    zones = tessellate_hexagons(cfg.transform.bounds, hex_area)
    plots = sample_plots(truth, cfg)
    groups = assign_plots_to_zones(plots, zones, cfg.projection)
    unit_of = {p.plot_id: zid for zid, ps in groups.items() for p in ps}
    plots = [replace(p, unit_id=unit_of[p.plot_id] if unit_of[p.plot_id] != "_unassigned" else "") for p in plots]
    plots = fuzz_and_swap(plots, cfg)

    paths = {
        "raster": out / "agbd.asc",
        "plots": out / "plots.csv",
        "weights": out / "weights.csv",
        "zones": out / "zones.geojson",
        "truth": out / "truth.csv",
    }
    write_ascii_grid(raster, paths["raster"])
    write_plots(plots, paths["plots"])
    write_zones(zones, paths["zones"])
    with open(paths["weights"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "stratum_id", "weight"])
        for unit, ws in stratum_weights(truth, zones).items():
            for stratum in (FOREST, NONFOREST):
                w.writerow([unit, stratum, repr(ws[stratum])])
    with open(paths["truth"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone_id", "true_mean"])
        for zid, m in true_zone_means(truth, zones).items():
            w.writerow([zid, "" if m is None else format(m, ".9g")])
    return paths
