"""Independent reference implementations used only by the tests.

They are written for clarity, not speed, and share no code with the package.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def _exact(v):
    v = float(v)
    return int(v) if v.is_integer() else Fraction(v)


def inside_convex(px, py, ring) -> bool:
    """Closed convex polygon test by cross-product signs (boundary counts as inside)."""
    sign = 0
    k = len(ring)
    for i in range(k):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % k]
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        if cross == 0:
            # on the supporting line; inside iff within the segment's box
            if min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by):
                return True
            return False
        s = 1 if cross > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


def random_convex_ring(rng, x0, y0, x1, y1, half_grid=False, k=None):
    """Convex polygon from the hull of random points inside a box."""
    while True:
        m = k or int(rng.integers(3, 10))
        pts = np.column_stack([rng.uniform(x0, x1, m), rng.uniform(y0, y1, m)])
        if half_grid:
            pts = np.round(pts * 2) / 2
        hull = _hull(pts)
        if len(hull) >= 3 and _area2(hull) > 0:
            return hull


def _area2(ring):
    return abs(sum(ring[i][0] * ring[(i + 1) % len(ring)][1] - ring[(i + 1) % len(ring)][0] * ring[i][1] for i in range(len(ring))))


def _hull(points):
    pts = sorted(set(map(tuple, points)))
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def brute_zonal(values, nodata, x_ll, y_ll, cell, rings: dict):
    """Double loop over every pixel; ties go to the smallest zone id.

    Returns ``{zone_id: (n, sum, mean, var_of_mean)}`` computed with exact
    rational arithmetic and rounded once at the end.
    """
    n_rows, n_cols = values.shape
    members = {zid: [] for zid in rings}
    order = sorted(rings)
    for r in range(n_rows):
        for c in range(n_cols):
            v = values[r, c]
            if v == nodata:
                continue
            x = x_ll + (c + 0.5) * cell
            y = y_ll + (n_rows - r - 0.5) * cell
            for zid in order:
                if inside_convex(x, y, rings[zid]):
                    members[zid].append(_exact(v))
                    break
    out = {}
    for zid, vs in members.items():
        out[zid] = _exact_moments(vs)
    return out


def _exact_moments(vs):
    """``(n, sum, mean, var_of_mean)`` from exact rationals, each rounded once."""
    n = len(vs)
    if n == 0:
        return (0, 0.0, None, None)
    s1 = sum(vs)
    s2 = sum(v * v for v in vs)
    var = Fraction(n * s2 - s1 * s1, n * n * (n - 1)) if n > 1 else None
    return (n, float(s1), float(Fraction(s1, n)), None if var is None else float(var))


def index_of_agreement_direct(ref, pred, c=2.0):
    """Branch-by-branch evaluation of the refined index of agreement."""
    ref = [float(v) for v in ref]
    pred = [float(v) for v in pred]
    n = len(ref)
    o_bar = sum(ref) / n
    a = sum(abs(p - o) for p, o in zip(pred, ref))
    b = c * sum(abs(o - o_bar) for o in ref)
    if b == 0:
        return 1.0 if a == 0 else float("nan")
    if a <= b:
        return 1.0 - a / b
    return b / a - 1.0


def t_quantile_by_integration(p, df):
    """Quantile of Student's t by quadrature of the density plus bisection."""
    from scipy import integrate

    log_c = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)

    def pdf(x):
        return math.exp(log_c - (df + 1) / 2 * math.log1p(x * x / df))

    def cdf(x):
        val, _ = integrate.quad(pdf, 0.0, x, limit=200)
        return 0.5 + val

    lo, hi = 0.0, 1.0
    while cdf(hi) < p:
        hi *= 2
    for _ in range(80):
        mid = (lo + hi) / 2
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def brute_zonal_fast(values, nodata, x_ll, y_ll, cell, rings: dict):
    """Same contract as :func:`brute_zonal`, vectorised over pixels.

    Membership is the closed convex test (all edge cross products >= 0 for a
    counter-clockwise ring); accumulation is exact rational arithmetic.
    """
    n_rows, n_cols = values.shape
    cols, rows = np.meshgrid(np.arange(n_cols), np.arange(n_rows))
    x = x_ll + (cols + 0.5) * cell
    y = y_ll + (n_rows - rows - 0.5) * cell
    free = values != nodata
    out = {}
    for zid in sorted(rings):
        ring = rings[zid]
        if sum(ring[i][0] * ring[(i + 1) % len(ring)][1] - ring[(i + 1) % len(ring)][0] * ring[i][1] for i in range(len(ring))) < 0:
            ring = ring[::-1]
        inside = np.ones(values.shape, dtype=bool)
        for i in range(len(ring)):
            ax, ay = ring[i]
            bx, by = ring[(i + 1) % len(ring)]
            inside &= (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0
        mine = inside & free
        free = free & ~mine
        vs = [_exact(v) for v in values[mine]]  # row-major order
        out[zid] = _exact_moments(vs)
    return out
