"""End-to-end validation: mask, project, zonal statistics, plot estimates,
pixel-count filter and the agreement battery, with report files."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import os
import shutil
import tempfile
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .agreement import AgreementError, PairedUnit, agreement_report, histogram, is_significant
from .config import RunConfig
from .design import (
    UNASSIGNED,
    DesignError,
    assign_plots_to_zones,
    estimate_unit,
    filter_years,
    load_plots,
    load_weights,
)
from .geom import project_zoneset, read_zones, zones_to_geojson
from .grid import apply_inundation_mask, read_grid, subsample_windows
from .zonal import (
    FilterThreshold,
    filter_zones,
    grouped_thresholds,
    read_zone_variances,
    write_zonal_csv,
    zonal_stats,
)

log = logging.getLogger(__name__)

THREADS_ENV = "AGBD_VALIDATE_THREADS"


class PipelineError(RuntimeError):
    pass


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise PipelineError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise PipelineError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _g(x) -> str:
    return "" if x is None else format(float(x), ".9g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, OSError) as exc:
        raise PipelineError(f"{name}: {exc}") from exc


def run_validate(cfg: RunConfig, workers: int | None = None) -> dict:
    """Run the full pipeline and write the report files into ``cfg.output_dir``.

    Outputs are staged in a temporary directory and moved into place only
    when every stage succeeded.  Returns the manifest.
    """
    workers = workers or worker_count()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        manifest = _run(cfg, staging, workers)
        for f in sorted(staging.iterdir()):
            os.replace(f, out_dir / f.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return manifest


def _run(cfg: RunConfig, out: Path, workers: int) -> dict:
    raster = _stage("grid", read_grid, cfg.raster, crs=cfg.raster_crs)
    if cfg.inundation is not None:
        freq = _stage("grid", read_grid, cfg.inundation, crs=cfg.raster_crs)
        raster = _stage("grid", apply_inundation_mask, raster, freq, cfg.mask_threshold)

    zones_in = _stage("geom", read_zones, cfg.zones)
    zones = _stage("geom", project_zoneset, zones_in, cfg.projection)
    projection = cfg.projection if raster.crs == "geographic" else None
    stats = _stage("zonal", zonal_stats, raster, zones, projection, workers=workers)
    log.info("zonal statistics for %d zones", len(stats))

    # pixel-count filter, one threshold per group
    group_key = cfg.filter_group_key
    props = {z.zone_id: z.properties for z in zones}

    def group_of(zid: str) -> str:
        return "" if group_key is None else str(props[zid].get(group_key, ""))

    thresholds: dict[str, FilterThreshold | float] = {}
    if cfg.filter_mode == "auto":
        thresholds = _stage("zonal", grouped_thresholds, stats.values(), group_of, cfg.sigma_ddof)
        result = filter_zones(stats.values(), thresholds, group_of)
    elif cfg.filter_mode == "fixed":
        result = filter_zones(stats.values(), cfg.filter_threshold)
    else:
        result = filter_zones(stats.values(), float("-inf"))
    retained = {s.zone_id: s for s in result.retained}

    plots_all = _stage("design", load_plots, cfg.plots)
    plots = filter_years(plots_all, cfg.year_window)
    weights = _stage("design", load_weights, cfg.weights) if cfg.weights is not None else {}
    override_var = _stage("zonal", read_zone_variances, cfg.pred_variance) if cfg.pred_variance else {}

    mismatched = labelled = 0
    if cfg.plot_grouping == "spatial":
        groups = _stage("design", assign_plots_to_zones, plots, zones, cfg.projection)
        # plots whose location falls outside the unit they are labelled with
        # (after coordinate fuzzing, say)
        unit_of_zone = {z.zone_id: z.unit_id for z in zones}
        for zid, ps in groups.items():
            for p in ps:
                if p.unit_id:
                    labelled += 1
                    mismatched += unit_of_zone.get(zid) != p.unit_id
    else:
        by_unit = defaultdict(list)
        for p in plots:
            by_unit[p.unit_id].append(p)
        groups = {z.zone_id: by_unit.get(z.unit_id, []) for z in zones}
        assigned = {p.plot_id for ps in groups.values() for p in ps}
        groups[UNASSIGNED] = [p for p in plots if p.plot_id not in assigned]

    units: list[PairedUnit] = []
    estimates = {}
    missing: dict[str, str] = {}
    for z in zones:
        zid = z.zone_id
        if zid not in retained:
            continue
        s = retained[zid]
        pred_var = override_var.get(zid, s.var_of_mean)
        if s.mean is None or pred_var is None:
            missing[zid] = "fewer than 2 valid pixels"
            continue
        zplots = groups.get(zid, [])
        if len(zplots) < 2:
            missing[zid] = f"{len(zplots)} plot(s)"
            continue
        try:
            est = estimate_unit(zplots, z.unit_id, weights.get(z.unit_id), cfg.variance_estimator)
        except DesignError as exc:
            missing[zid] = str(exc)
            continue
        estimates[zid] = est
        units.append(PairedUnit(zid, s.mean, pred_var, est.mean, est.var_of_mean))

    try:
        report = agreement_report(units, n_filtered=len(result.excluded), c=cfg.agreement_c, qq_k=cfg.qq_points)
    except AgreementError as exc:
        raise PipelineError(f"agreement: {exc}") from exc

    summary = report.summary()
    _write_json(out / "report.json", summary)

    unit_rows = []
    extra = {z.zone_id: {"t": None, "diff": None} for z in zones}
    for u in units:
        t = report.t_values[u.unit_id]
        unit_rows.append(
            [u.unit_id, _g(u.pred_mean), _g(u.ref_mean), _g(u.pred_var), _g(u.ref_var), _g(t),
             str(is_significant(t, cfg.critical_t)).lower()]
        )
        extra[u.unit_id] = {"t": t, "diff": u.pred_mean - u.ref_mean}
    _write_csv(out / "units.csv", ["unit_id", "pred_mean", "ref_mean", "pred_var", "ref_var", "t", "significant"], unit_rows)
    _write_csv(out / "qq.csv", ["p", "q_pred", "q_ref"], [[_g(p), _g(a), _g(b)] for p, a, b in report.qq])

    hist_rows = []
    sources = {
        "raster": subsample_windows(raster, cfg.subsample_window, cfg.seed),
        "plots": np.array([p.agbd for p in plots]),
        "diff": np.array([u.pred_mean - u.ref_mean for u in units]),
    }
    for source, values in sources.items():
        for lo, count in histogram(values, cfg.bin_width):
            hist_rows.append([_g(lo), _g(lo + cfg.bin_width), count, source])
    _write_csv(out / "histograms.csv", ["bin_lo", "bin_hi", "count", "source"], hist_rows)

    write_zonal_csv(stats.values(), out / "zonal.csv")
    with open(out / "tstat.geojson", "w", encoding="utf-8") as fh:
        json.dump(zones_to_geojson(zones_in, extra), fh, indent=1)
        fh.write("\n")

    n_plots_used = sum(estimates[u.unit_id].n_plots for u in units)
    manifest = {
        "version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "counts": {
            "zones_in": len(zones),
            "zones_retained": len(units),
            "zones_filtered": len(result.excluded),
            "zones_without_plots": len(missing),
            "plots_loaded": len(plots_all),
            "plots_in_year_window": len(plots),
            "plots_unassigned": len(groups.get(UNASSIGNED, [])),
            "plots_used": n_plots_used,
            "raster_valid_pixels": int(raster.valid.sum()),
            "plots_outside_labelled_unit": mismatched,
        },
        "outside_labelled_unit_fraction": mismatched / labelled if labelled else None,
        "thresholds": {
            g: {"t_n": t.t_n, "n_bar": t.n_bar, "sigma_n": t.sigma_n}
            for g, t in thresholds.items()
            if isinstance(t, FilterThreshold)
        },
        "filter_mode": cfg.filter_mode,
        "excluded_zones": result.excluded,
        "units_without_data": missing,
        "outputs": sorted(["report.json", "units.csv", "qq.csv", "histograms.csv", "zonal.csv", "tstat.geojson", "manifest.json"]),
    }
    _write_json(out / "manifest.json", manifest)
    return manifest
