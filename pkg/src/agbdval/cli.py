"""Command-line entry point: ``agbd-validate <subcommand>``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import CONFIG_KEYS, ConfigError, coerce_override, parse_config
from .design import UNASSIGNED, DesignError, assign_plots_to_zones, estimate_unit, filter_years, load_plots, load_weights
from .geom import AlbersSpec, GeometryError, hexagon_side, project_zoneset, read_zones, tessellate_hexagons, write_zones
from .grid import GridError, read_grid
from .pipeline import PipelineError, run_validate, worker_count
from .synth import SynthConfig, write_synthetic_bundle
from .zonal import write_zonal_csv, zonal_stats

log = logging.getLogger("agbdval")


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _cmd_validate(args) -> int:
    overrides = {}
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = coerce_override(key, value)
    cfg = parse_config(args.config, overrides=overrides)
    manifest = run_validate(cfg)
    report = json.loads((Path(cfg.output_dir) / "report.json").read_text(encoding="utf-8"))
    c = manifest["counts"]
    print(
        f"units={report['n_units']} filtered={report['n_filtered']} "
        f"r2={report['r2']:.4f} slope={report['slope']:.4f} intercept={report['intercept']:.3f} "
        f"rmse={report['rmse']:.3f} r={report['pearson_r']:.4f} d_r={report['d_r']:.4f} "
        f"(zones in={c['zones_in']}, without data={c['zones_without_plots']})"
    )
    return 0


def _cmd_tessellate(args) -> int:
    if args.from_raster:
        bounds = read_grid(args.from_raster).transform.bounds
    elif args.bounds:
        bounds = tuple(args.bounds)
    else:
        raise GeometryError("give --bounds XMIN YMIN XMAX YMAX or --from-raster PATH")
    area = args.area_ha * 1e4
    zones = tessellate_hexagons(bounds, area)
    write_zones(zones, args.out)
    print(f"{len(zones)} hexagons, side {hexagon_side(area):.1f} m -> {args.out}")
    return 0


def _projection(args) -> AlbersSpec:
    return AlbersSpec(**json.loads(args.projection)) if args.projection else AlbersSpec()


def _cmd_zonal(args) -> int:
    raster = read_grid(args.raster, crs=args.raster_crs)
    proj = _projection(args)
    zones = project_zoneset(read_zones(args.zones), proj)
    stats = zonal_stats(raster, zones, proj if raster.crs == "geographic" else None, workers=worker_count())
    write_zonal_csv(stats.values(), args.out)
    print(f"{len(stats)} zones -> {args.out}")
    return 0


def _cmd_estimate(args) -> int:
    proj = _projection(args)
    zones = project_zoneset(read_zones(args.zones), proj)
    plots = filter_years(load_plots(args.plots), tuple(args.year_window) if args.year_window else None)
    weights = load_weights(args.weights) if args.weights else {}
    groups = assign_plots_to_zones(plots, zones, proj)
    rows = []
    for z in zones:
        ps = groups[z.zone_id]
        try:
            e = estimate_unit(ps, z.unit_id, weights.get(z.unit_id), args.variance_estimator)
        except DesignError as exc:
            log.info("zone %s skipped: %s", z.zone_id, exc)
            rows.append([z.zone_id, "", "", len(ps), ""])
            continue
        rows.append([z.zone_id, format(e.mean, ".9g"), format(e.var_of_mean, ".9g"), e.n_plots, e.method])
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone_id", "mean", "var_of_mean", "n_plots", "method"])
        w.writerows(rows)
    print(f"{len(rows)} zones, {len(groups[UNASSIGNED])} unassigned plots -> {args.out}")
    return 0


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        seed=args.seed,
        rows=args.rows,
        cols=args.cols,
        cell=args.cell,
        field_model=args.field_model,
        pixel_noise_sd=args.pixel_noise_sd,
        plot_noise_sd=args.plot_noise_sd,
        plot_density=args.plot_density,
        fuzz_radius=(args.fuzz_min, args.fuzz_max),
        swap_fraction=args.swap_fraction,
    )
    paths = write_synthetic_bundle(cfg, args.out_dir, hex_area=args.hex_area_ha * 1e4)
    for k, p in paths.items():
        print(f"{k}: {p}")
    return 0


def _cmd_version(args) -> int:
    print(__version__)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agbd-validate", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="run the full validation pipeline from a JSON config")
    p.add_argument("config", help="JSON run configuration")
    for key in CONFIG_KEYS:
        p.add_argument(_flag(key), dest=key, metavar="VALUE", help=f"override config key {key!r}")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("tessellate", help="write equal-area hexagons covering a rectangle")
    p.add_argument("--bounds", type=float, nargs=4, metavar=("XMIN", "YMIN", "XMAX", "YMAX"))
    p.add_argument("--from-raster", help="use this raster's bounds")
    p.add_argument("--area-ha", type=float, default=64000.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tessellate)

    p = sub.add_parser("zonal", help="per-zone pixel statistics as CSV")
    p.add_argument("--raster", required=True)
    p.add_argument("--raster-crs", choices=("planar", "geographic"), default=None)
    p.add_argument("--zones", required=True)
    p.add_argument("--projection", help="Albers parameters as JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_zonal)

    p = sub.add_parser("estimate", help="per-zone design-based plot estimates as CSV")
    p.add_argument("--plots", required=True)
    p.add_argument("--zones", required=True)
    p.add_argument("--weights")
    p.add_argument("--year-window", type=int, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--variance-estimator", choices=("stratified", "bechtold_patterson"), default="stratified")
    p.add_argument("--projection", help="Albers parameters as JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("synth", help="write a synthetic landscape bundle")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--rows", type=int, default=200)
    p.add_argument("--cols", type=int, default=200)
    p.add_argument("--cell", type=float, default=250.0)
    p.add_argument("--field-model", choices=("constant", "gradient", "lumpy"), default="lumpy")
    p.add_argument("--pixel-noise-sd", type=float, default=0.0)
    p.add_argument("--plot-noise-sd", type=float, default=0.0)
    p.add_argument("--plot-density", type=float, default=1.0 / 2400.0, help="plots per hectare")
    p.add_argument("--fuzz-min", type=float, default=800.0)
    p.add_argument("--fuzz-max", type=float, default=1500.0)
    p.add_argument("--swap-fraction", type=float, default=0.2)
    p.add_argument("--hex-area-ha", type=float, default=64000.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=_cmd_version)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PipelineError, GridError, GeometryError, DesignError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
