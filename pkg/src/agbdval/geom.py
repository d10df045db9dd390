"""Planar geometry, spherical Albers equal-area projection and hexagon lattices."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np


class GeometryError(ValueError):
    pass


Point = tuple[float, float]


@dataclass(frozen=True, eq=False)
class Polygon:
    """Outer ring plus optional holes, each an ``(k, 2)`` array.

    Rings are stored open: the closing vertex is implied.
    """

    outer: np.ndarray
    holes: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        outer = _as_ring(self.outer)
        holes = tuple(_as_ring(h) for h in self.holes)
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "holes", holes)

    @property
    def rings(self) -> tuple[np.ndarray, ...]:
        return (self.outer,) + self.holes

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        o = self.outer
        return (float(o[:, 0].min()), float(o[:, 1].min()), float(o[:, 0].max()), float(o[:, 1].max()))


def _as_ring(coords) -> np.ndarray:
    ring = np.array(coords, dtype=np.float64).reshape(-1, 2)
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise GeometryError(f"ring needs at least 3 distinct points, got {len(ring)}")
    if not np.isfinite(ring).all():
        raise GeometryError("ring has non-finite coordinates")
    nxt = np.roll(ring, -1, axis=0)
    if (ring == nxt).all(axis=1).any():
        raise GeometryError("ring has repeated consecutive points")
    ring.setflags(write=False)
    return ring


@dataclass(frozen=True, eq=False)
class Zone:
    zone_id: str
    parts: tuple[Polygon, ...]
    properties: dict = field(default_factory=dict)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        boxes = np.array([p.bbox for p in self.parts])
        return (boxes[:, 0].min(), boxes[:, 1].min(), boxes[:, 2].max(), boxes[:, 3].max())

    @property
    def unit_id(self) -> str:
        return str(self.properties.get("unit_id") or self.zone_id)


@dataclass(frozen=True, eq=False)
class ZoneSet:
    zones: tuple[Zone, ...]
    crs: str = "planar"

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        ids = [z.zone_id for z in self.zones]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise GeometryError(f"duplicate zone_id(s): {dup[:5]}")

    def __len__(self):
        return len(self.zones)

    def __iter__(self):
        return iter(self.zones)

    def __getitem__(self, k):
        return self.zones[k]

    @property
    def ids(self) -> list[str]:
        return [z.zone_id for z in self.zones]


# --------------------------------------------------------------------------
# Albers equal-area conic (sphere)


@dataclass(frozen=True)
class AlbersSpec:
    lat_1: float = 29.5
    lat_2: float = 45.5
    lat_0: float = 23.0
    lon_0: float = -96.0
    radius: float = 6371007.181
    false_easting: float = 0.0
    false_northing: float = 0.0

    def __post_init__(self):
        if self.lat_1 == -self.lat_2:
            raise GeometryError("standard parallels symmetric about the equator give a degenerate cone")
        if not self.radius > 0:
            raise GeometryError("radius must be > 0")

    @property
    def _consts(self):
        s1, s2 = math.sin(math.radians(self.lat_1)), math.sin(math.radians(self.lat_2))
        n = (s1 + s2) / 2.0
        c = math.cos(math.radians(self.lat_1)) ** 2 + 2.0 * n * s1
        rho0 = self.radius * math.sqrt(max(c - 2.0 * n * math.sin(math.radians(self.lat_0)), 0.0)) / n
        return n, c, rho0


def albers_forward(lon, lat, spec: AlbersSpec = AlbersSpec()):
    """Project geographic coordinates (degrees) to planar metres.

    Accepts scalars or arrays.  Latitudes of exactly +/-90 are allowed; a
    negative radicand from rounding at the apex is clamped to zero.
    """
    lon_a = np.asarray(lon, dtype=np.float64)
    lat_a = np.asarray(lat, dtype=np.float64)
    if not (np.isfinite(lon_a).all() and np.isfinite(lat_a).all()):
        raise GeometryError("non-finite coordinate")
    if (np.abs(lat_a) > 90).any():
        raise GeometryError("latitude outside [-90, 90]")
    n, c, rho0 = spec._consts
    rho = spec.radius * np.sqrt(np.maximum(c - 2.0 * n * np.sin(np.radians(lat_a)), 0.0)) / n
    theta = n * np.radians(lon_a - spec.lon_0)
    x = rho * np.sin(theta) + spec.false_easting
    y = rho0 - rho * np.cos(theta) + spec.false_northing
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def albers_inverse(x, y, spec: AlbersSpec = AlbersSpec()):
    """Inverse of :func:`albers_forward`."""
    n, c, rho0 = spec._consts
    xa = np.asarray(x, dtype=np.float64) - spec.false_easting
    ya = rho0 - (np.asarray(y, dtype=np.float64) - spec.false_northing)
    sign = 1.0 if n > 0 else -1.0
    rho = sign * np.hypot(xa, ya)
    theta = np.arctan2(sign * xa, sign * ya)
    s = (c - (rho * n / spec.radius) ** 2) / (2.0 * n)
    lat = np.degrees(np.arcsin(np.clip(s, -1.0, 1.0)))
    lon = spec.lon_0 + np.degrees(theta / n)
    if lat.ndim == 0:
        return float(lon), float(lat)
    return lon, lat


def project_zoneset(zones: ZoneSet, spec: AlbersSpec = AlbersSpec()) -> ZoneSet:
    """Project a geographic ZoneSet vertex by vertex."""
    if zones.crs == "planar":
        return zones

    def ring(r):
        x, y = albers_forward(r[:, 0], r[:, 1], spec)
        return np.column_stack([x, y])

    out = []
    for z in zones:
        parts = tuple(Polygon(ring(p.outer), tuple(ring(h) for h in p.holes)) for p in z.parts)
        out.append(Zone(z.zone_id, parts, dict(z.properties)))
    return ZoneSet(tuple(out), crs="planar")


# --------------------------------------------------------------------------
# point in polygon


def _edge_canonical(ax, ay, bx, by):
    # Both neighbours of a shared edge must evaluate it with the same
    # endpoint order, so the crossing abscissa rounds identically.
    if (ay, ax) > (by, bx):
        return bx, by, ax, ay
    return ax, ay, bx, by


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    ax, ay, bx, by = _edge_canonical(ax, ay, bx, by)
    if not (min(ax, bx) <= px <= max(ax, bx) and ay <= py <= by):
        return False
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax) == 0.0


def _crosses(px, py, ax, ay, bx, by) -> bool:
    if (ay > py) == (by > py):
        return False
    ax, ay, bx, by = _edge_canonical(ax, ay, bx, by)
    return px < ax + (py - ay) * (bx - ax) / (by - ay)


def point_in_polygon(p: Point, poly: Union[Polygon, Zone]) -> bool:
    """Even-odd ray casting; points on any edge or vertex count as inside."""
    if isinstance(poly, Zone):
        return any(point_in_polygon(p, part) for part in poly.parts)
    px, py = float(p[0]), float(p[1])
    inside = False
    for ring in poly.rings:
        k = len(ring)
        for i in range(k):
            ax, ay = float(ring[i, 0]), float(ring[i, 1])
            bx, by = float(ring[(i + 1) % k, 0]), float(ring[(i + 1) % k, 1])
            if _on_segment(px, py, ax, ay, bx, by):
                return True
            if _crosses(px, py, ax, ay, bx, by):
                inside = not inside
    return inside


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, poly: Union[Polygon, Zone]) -> np.ndarray:
    """Vectorised :func:`point_in_polygon` with bit-identical decisions."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if isinstance(poly, Zone):
        out = np.zeros(xs.shape, dtype=bool)
        for part in poly.parts:
            out |= points_in_polygon(xs, ys, part)
        return out
    inside = np.zeros(xs.shape, dtype=bool)
    edge = np.zeros(xs.shape, dtype=bool)
    for ring in poly.rings:
        k = len(ring)
        for i in range(k):
            ax, ay, bx, by = _edge_canonical(
                float(ring[i, 0]), float(ring[i, 1]), float(ring[(i + 1) % k, 0]), float(ring[(i + 1) % k, 1])
            )
            in_y = (ay <= ys) & (ys <= by)
            if not in_y.any():
                continue
            cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
            edge |= in_y & (min(ax, bx) <= xs) & (xs <= max(ax, bx)) & (cross == 0.0)
            if ay != by:
                straddle = (ay > ys) != (by > ys)
                with np.errstate(invalid="ignore", divide="ignore"):
                    xint = ax + (ys - ay) * (bx - ax) / (by - ay)
                inside ^= straddle & (xs < xint)
    return inside | edge


# --------------------------------------------------------------------------
# area and hexagons


def _shoelace(ring: np.ndarray) -> float:
    r = ring - ring[0]
    x, y = r[:, 0], r[:, 1]
    return 0.5 * math.fsum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def polygon_area(poly: Union[Polygon, Zone]) -> float:
    """Planar area: |outer| minus the holes (summed over parts for a Zone)."""
    if isinstance(poly, Zone):
        return math.fsum(polygon_area(p) for p in poly.parts)
    return abs(_shoelace(poly.outer)) - math.fsum(abs(_shoelace(h)) for h in poly.holes)


def hexagon_side(target_area: float) -> float:
    """Side of the regular hexagon with the given area."""
    if not target_area > 0:
        raise GeometryError("target_area must be > 0")
    return math.sqrt(2.0 * target_area / (3.0 * math.sqrt(3.0)))


def tessellate_hexagons(bounds: Sequence[float], target_area: float) -> ZoneSet:
    """Cover ``bounds = (xmin, ymin, xmax, ymax)`` with flat-topped hexagons.

    The lattice is anchored so hexagon ``hex_0_0`` is centred on
    ``(xmin, ymin)``; odd columns sit half a row lower.  Vertices are
    computed from integer lattice coordinates so neighbours share
    bit-identical edges.
    """
    xmin, ymin, xmax, ymax = map(float, bounds)
    if not (xmax >= xmin and ymax >= ymin):
        raise GeometryError(f"empty bounds {bounds}")
    s = hexagon_side(target_area)
    half = s / 2.0
    h = math.sqrt(3.0) / 2.0 * s

    n_cols = int(math.ceil((xmax - xmin) / (1.5 * s))) + 2
    n_rows = int(math.ceil((ymax - ymin) / (2.0 * h))) + 2
    # (dx in half-sides, dy in half-heights), counter-clockwise from east
    offsets = ((2, 0), (1, 1), (-1, 1), (-2, 0), (-1, -1), (1, -1))

    def overlaps(lo, hi, a, b):
        return lo < b and hi > a if b > a else lo <= b and hi >= a

    zones = []
    for col in range(n_cols):
        kx = 3 * col
        for row in range(n_rows):
            my = 2 * row - (col % 2)
            cx, cy = xmin + kx * half, ymin + my * h
            if not (overlaps(cx - s, cx + s, xmin, xmax) and overlaps(cy - h, cy + h, ymin, ymax)):
                continue
            ring = [(xmin + (kx + dx) * half, ymin + (my + dy) * h) for dx, dy in offsets]
            zones.append(Zone(f"hex_{row}_{col}", (Polygon(ring),), {"row": row, "col": col}))
    return ZoneSet(tuple(zones), crs="planar")


# --------------------------------------------------------------------------
# assigning points to zones


def _bucket_points(xs: np.ndarray, ys: np.ndarray, cell: float):
    x0, y0 = float(xs.min()), float(ys.min())
    bx = np.floor((xs - x0) / cell).astype(np.int64)
    by = np.floor((ys - y0) / cell).astype(np.int64)
    nbx = int(bx.max()) + 1
    key = by * nbx + bx
    order = np.argsort(key, kind="stable")
    nby = int(by.max()) + 1
    starts = np.searchsorted(key[order], np.arange(nbx * nby + 1))
    return x0, y0, nbx, nby, order, starts


def assign_points(
    zones: ZoneSet, xs: np.ndarray, ys: np.ndarray, workers: int | None = 1
) -> np.ndarray:
    """Index of the owning zone for every point, ``-1`` where none.

    A point on an edge shared by several zones goes to the zone with the
    lexicographically smallest ``zone_id``.  Membership tests per zone may
    run on ``workers`` threads; ownership is resolved sequentially in
    zone-id order so the result does not depend on the worker count.
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    ys = np.ascontiguousarray(ys, dtype=np.float64).ravel()
    owner = np.full(xs.size, -1, dtype=np.int64)
    if xs.size == 0 or len(zones) == 0:
        return owner

    boxes = np.array([z.bbox for z in zones], dtype=np.float64)
    widths = np.maximum(boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1])
    extent = max(float(xs.max() - xs.min()), float(ys.max() - ys.min()), 1e-12)
    cell = max(float(np.median(widths)) / 2.0, extent / 2048.0, 1e-12)
    x0, y0, nbx, nby, order, starts = _bucket_points(xs, ys, cell)

    def members(k: int) -> np.ndarray:
        zx0, zy0, zx1, zy1 = boxes[k]
        i0 = max(int(math.floor((zx0 - x0) / cell)) - 1, 0)
        i1 = min(int(math.floor((zx1 - x0) / cell)) + 1, nbx - 1)
        j0 = max(int(math.floor((zy0 - y0) / cell)) - 1, 0)
        j1 = min(int(math.floor((zy1 - y0) / cell)) + 1, nby - 1)
        if i0 > i1 or j0 > j1:
            return np.empty(0, dtype=np.int64)
        chunks = [order[starts[j * nbx + i0]: starts[j * nbx + i1 + 1]] for j in range(j0, j1 + 1)]
        cand = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        px, py = xs[cand], ys[cand]
        box = (px >= zx0) & (px <= zx1) & (py >= zy0) & (py <= zy1)
        cand = cand[box]
        return cand[points_in_polygon(xs[cand], ys[cand], zones[k])]

    by_id = sorted(range(len(zones)), key=lambda k: zones[k].zone_id)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hits = list(pool.map(members, by_id))
    else:
        hits = [members(k) for k in by_id]
    for k, idx in zip(by_id, hits):
        free = idx[owner[idx] < 0]
        owner[free] = k
    return owner


# --------------------------------------------------------------------------
# GeoJSON


def _parts_from_geometry(geom: dict) -> tuple[Polygon, ...]:
    gtype = geom.get("type")
    coords = geom.get("coordinates")
    if gtype == "Polygon":
        polys = [coords]
    elif gtype == "MultiPolygon":
        polys = coords
    else:
        raise GeometryError(f"unsupported geometry type {gtype!r}")
    return tuple(Polygon(p[0], tuple(p[1:])) for p in polys)


def zones_from_geojson(obj: dict) -> ZoneSet:
    if obj.get("type") != "FeatureCollection":
        raise GeometryError("zones must be a GeoJSON FeatureCollection")
    crs = obj.get("crs_tag", "planar")
    if crs not in ("geographic", "planar"):
        raise GeometryError(f"crs_tag must be 'geographic' or 'planar', got {crs!r}")
    zones = []
    for i, feat in enumerate(obj.get("features", [])):
        props = dict(feat.get("properties") or {})
        if "zone_id" not in props:
            raise GeometryError(f"feature {i}: missing required property 'zone_id'")
        zid = str(props["zone_id"])
        try:
            parts = _parts_from_geometry(feat.get("geometry") or {})
        except GeometryError as exc:
            raise GeometryError(f"feature {i} ({zid}): {exc}") from None
        zones.append(Zone(zid, parts, props))
    return ZoneSet(tuple(zones), crs=crs)


def read_zones(path: Union[str, Path]) -> ZoneSet:
    with open(path, "r", encoding="utf-8") as fh:
        return zones_from_geojson(json.load(fh))


def _ring_coords(ring: np.ndarray) -> list:
    pts = [[float(x), float(y)] for x, y in ring]
    return pts + [pts[0]]


def zones_to_geojson(zones: ZoneSet, extra: dict[str, dict] | None = None) -> dict:
    """FeatureCollection for ``zones``; ``extra`` maps zone_id to added properties."""
    feats = []
    for z in zones:
        polys = [[_ring_coords(p.outer)] + [_ring_coords(h) for h in p.holes] for p in z.parts]
        geom = (
            {"type": "Polygon", "coordinates": polys[0]}
            if len(polys) == 1
            else {"type": "MultiPolygon", "coordinates": polys}
        )
        props = {"zone_id": z.zone_id, **{k: v for k, v in z.properties.items() if k != "zone_id"}}
        if extra and z.zone_id in extra:
            props.update(extra[z.zone_id])
        feats.append({"type": "Feature", "properties": props, "geometry": geom})
    return {"type": "FeatureCollection", "crs_tag": zones.crs, "features": feats}


def write_zones(zones: ZoneSet, path: Union[str, Path], extra: dict[str, dict] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(zones_to_geojson(zones, extra), fh, indent=1)
        fh.write("\n")
