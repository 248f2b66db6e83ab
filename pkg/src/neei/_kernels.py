"""Compiled inner loops shared by the geometry, planning and navigation code.

Everything here works on plain float arrays so it can be jitted; the public
wrappers live in ``geomworld`` and ``rep``.
"""
import math

import numpy as np
from numba import njit

ARC_EPS = 1e-6


@njit(cache=True)
def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    two_pi = 2.0 * math.pi
    return theta - two_pi * math.ceil((theta - math.pi) / two_pi)


@njit(cache=True)
def unicycle_step(x, y, th, v, w, dt, exact_arc):
    if exact_arc and abs(w) > ARC_EPS:
        th1 = th + w * dt
        x1 = x + v / w * (math.sin(th1) - math.sin(th))
        y1 = y - v / w * (math.cos(th1) - math.cos(th))
    else:
        x1 = x + v * math.cos(th) * dt
        y1 = y + v * math.sin(th) * dt
        th1 = th + w * dt
    return x1, y1, wrap_angle(th1)


@njit(cache=True)
def _point_segment_sq(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    den = ex * ex + ey * ey
    t = 0.0
    if den > 0.0:
        t = ((px - ax) * ex + (py - ay) * ey) / den
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    dx = px - (ax + t * ex)
    dy = py - (ay + t * ey)
    return dx * dx + dy * dy


@njit(cache=True)
def _separated(a, na, b, nb):
    """True if some edge normal of ``a`` strictly separates ``a`` from ``b``."""
    for i in range(na):
        j = (i + 1) % na
        nx = a[j, 1] - a[i, 1]
        ny = a[i, 0] - a[j, 0]
        amin = 1e300
        amax = -1e300
        for k in range(na):
            p = a[k, 0] * nx + a[k, 1] * ny
            amin = min(amin, p)
            amax = max(amax, p)
        bmin = 1e300
        bmax = -1e300
        for k in range(nb):
            p = b[k, 0] * nx + b[k, 1] * ny
            bmin = min(bmin, p)
            bmax = max(bmax, p)
        if bmin > amax or amin > bmax:
            return True
    return False


@njit(cache=True)
def polygon_distance(a, na, b, nb):
    """Exact distance between two convex polygons (0 when they meet).

    Uses the separating-axis test for intersection, then the minimum over
    vertex/edge pairs in both directions, which is exact for disjoint convex
    sets in the plane.
    """
    if not _separated(a, na, b, nb) and not _separated(b, nb, a, na):
        return 0.0
    best = 1e300
    for i in range(na):
        for j in range(nb):
            k = (j + 1) % nb
            d = _point_segment_sq(a[i, 0], a[i, 1], b[j, 0], b[j, 1], b[k, 0], b[k, 1])
            if d < best:
                best = d
    for i in range(nb):
        for j in range(na):
            k = (j + 1) % na
            d = _point_segment_sq(b[i, 0], b[i, 1], a[j, 0], a[j, 1], a[k, 0], a[k, 1])
            if d < best:
                best = d
    return math.sqrt(best)


@njit(cache=True)
def footprint_clearance(x, y, th, fp, fp_radius, verts, counts, centers, radii, vel, t_from, t, cutoff):
    """Min distance from the posed footprint to every obstacle at time ``t``.

    Obstacles whose bounding circles are farther than the running minimum (or
    ``cutoff``) are skipped; the returned value is exact whenever it is below
    ``cutoff``. Returns +inf with no obstacles.
    """
    world = np.empty((fp.shape[0], 2))
    moved = np.empty((verts.shape[1], 2))
    return _clearance(x, y, th, fp, fp_radius, verts, counts, centers, radii, vel, t_from, t, cutoff,
                      world, moved)


@njit(cache=True)
def _clearance(x, y, th, fp, fp_radius, verts, counts, centers, radii, vel, t_from, t, cutoff, world, moved):
    nf = fp.shape[0]
    c = math.cos(th)
    s = math.sin(th)
    for i in range(nf):
        world[i, 0] = x + c * fp[i, 0] - s * fp[i, 1]
        world[i, 1] = y + s * fp[i, 0] + c * fp[i, 1]
    best = cutoff
    for o in range(verts.shape[0]):
        tau = t - t_from[o]
        if tau < 0.0:
            tau = 0.0
        ox = vel[o, 0] * tau
        oy = vel[o, 1] * tau
        lb = math.hypot(centers[o, 0] + ox - x, centers[o, 1] + oy - y) - radii[o] - fp_radius
        if lb >= best:
            continue
        n = counts[o]
        for k in range(n):
            moved[k, 0] = verts[o, k, 0] + ox
            moved[k, 1] = verts[o, k, 1] + oy
        d = polygon_distance(world, nf, moved, n)
        if d < best:
            best = d
    return best


@njit(cache=True)
def focus_gain(x, y, elems, beta0, alpha, common_distance, cx, cy):
    """Perfect-focusing (MRT/MRC) gain ||h||^2 at (x, y)."""
    n = elems.shape[0]
    if common_distance:
        d = math.hypot(x - cx, y - cy)
        return n * beta0 * d ** (-alpha)
    g = 0.0
    half = 0.5 * alpha
    for i in range(n):
        dx = x - elems[i, 0]
        dy = y - elems[i, 1]
        r2 = dx * dx + dy * dy
        if alpha == 2.0:
            g += 1.0 / r2
        elif alpha == 3.0:
            g += 1.0 / (r2 * math.sqrt(r2))
        else:
            g += r2 ** (-half)
    return beta0 * g


@njit(cache=True)
def focus_gain_ula(x, y, elems, beta0, alpha, common_distance, cx, cy, ax, ay, spacing):
    """``focus_gain`` for a uniform line array, via the midpoint-rule integral.

    Each element stands for a segment of length ``spacing``; the sum of
    d^-alpha over elements becomes an integral along the axis with a closed
    form for alpha 2 and 3. The relative error is O((spacing/v)^2) with v the
    off-axis distance, below 1e-4 once v exceeds 50 spacings; closer in, and
    for other exponents, the exact loop is used.
    """
    n = elems.shape[0]
    px = x - cx
    py = y - cy
    u = px * ax + py * ay
    v = abs(px * ay - py * ax)
    if common_distance or n < 8 or v < 50.0 * spacing or (alpha != 2.0 and alpha != 3.0):
        return focus_gain(x, y, elems, beta0, alpha, common_distance, cx, cy)
    half = 0.5 * n * spacing
    lo = -half - u
    hi = half - u
    if alpha == 2.0:
        integral = (math.atan(hi / v) - math.atan(lo / v)) / v
    else:
        integral = (hi / math.sqrt(hi * hi + v * v) - lo / math.sqrt(lo * lo + v * v)) / (v * v)
    return beta0 * integral / spacing


@njit(cache=True)
def rollout_batch(x0, y0, th0, controls, dt, t0, exact_arc,
                  fp, fp_radius, verts, counts, centers, radii, vel, t_from, cutoff,
                  elems, beta0, alpha, common_distance, cx, cy, ax, ay, spacing,
                  snr_per_gain, bandwidth, with_rate):
    """Roll out C control sequences of length H from one start pose.

    Returns states (C, H+1, 3), per-step clearance (C, H) for steps 1..H and
    per-step perfect-focus rates (C, H) (zeros unless ``with_rate``).
    """
    nc = controls.shape[0]
    nh = controls.shape[1]
    states = np.empty((nc, nh + 1, 3))
    clear = np.empty((nc, nh))
    rates = np.zeros((nc, nh))
    world = np.empty((fp.shape[0], 2))
    moved = np.empty((verts.shape[1], 2))
    for c in range(nc):
        x = x0
        y = y0
        th = th0
        states[c, 0, 0] = x
        states[c, 0, 1] = y
        states[c, 0, 2] = th
        for k in range(nh):
            x, y, th = unicycle_step(x, y, th, controls[c, k, 0], controls[c, k, 1], dt, exact_arc)
            states[c, k + 1, 0] = x
            states[c, k + 1, 1] = y
            states[c, k + 1, 2] = th
            clear[c, k] = _clearance(x, y, th, fp, fp_radius, verts, counts, centers, radii,
                                     vel, t_from, t0 + (k + 1) * dt, cutoff, world, moved)
            if with_rate:
                g = focus_gain_ula(x, y, elems, beta0, alpha, common_distance, cx, cy, ax, ay, spacing)
                rates[c, k] = bandwidth * math.log2(1.0 + snr_per_gain * g)
    return states, clear, rates
