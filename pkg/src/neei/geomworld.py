"""Planar world model: convex obstacles, unicycle robots, clearance queries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import ControlLimitViolation


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return float(K.wrap_angle(float(theta)))


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Strictly convex polygon with counter-clockwise vertices (meters)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("a polygon needs at least 3 two-dimensional vertices")
        for i in range(len(v)):
            for j in range(i + 1, len(v)):
                if np.hypot(*(v[i] - v[j])) < 1e-9:
                    raise ValueError(f"duplicate vertices {i} and {j}")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if not np.all(cross > 0):
            raise ValueError("vertices must be counter-clockwise and strictly convex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __eq__(self, other):
        return isinstance(other, ConvexPolygon) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self):
        return hash(self.vertices.tobytes())

    @classmethod
    def rectangle(cls, cx: float, cy: float, width: float, height: float) -> "ConvexPolygon":
        hw, hh = width / 2.0, height / 2.0
        return cls([(cx - hw, cy - hh), (cx + hw, cy - hh), (cx + hw, cy + hh), (cx - hw, cy + hh)])

    @classmethod
    def from_bounds(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "ConvexPolygon":
        return cls([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)])

    def translated(self, offset) -> "ConvexPolygon":
        return ConvexPolygon(self.vertices + np.asarray(offset, dtype=float))

    def posed(self, x: float, y: float, theta: float) -> "ConvexPolygon":
        """Body-frame polygon placed at pose (x, y, theta)."""
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        return ConvexPolygon(self.vertices @ rot.T + np.array([x, y]))

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def radius(self) -> float:
        """Bounding-circle radius about ``centroid``."""
        return float(np.max(np.hypot(*(self.vertices - self.centroid).T)))

    @property
    def origin_radius(self) -> float:
        """Largest vertex distance from the frame origin."""
        return float(np.max(np.hypot(*self.vertices.T)))

    def contains(self, point) -> bool:
        """Closed point-in-polygon test."""
        p = np.asarray(point, dtype=float)
        e = np.roll(self.vertices, -1, axis=0) - self.vertices
        r = p - self.vertices
        return bool(np.all(e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0] >= -1e-12))


DEFAULT_FOOTPRINT = ConvexPolygon.rectangle(0.0, 0.0, 0.3, 0.3)


@dataclass(frozen=True)
class DynamicObstacle:
    """Convex obstacle translating at constant velocity from ``active_from`` on."""

    shape: ConvexPolygon
    velocity: tuple[float, float] = (0.0, 0.0)
    active_from: float = 0.0

    def at(self, t: float) -> ConvexPolygon:
        tau = max(0.0, t - self.active_from)
        return self.shape.translated(np.asarray(self.velocity) * tau)


@dataclass(frozen=True)
class RobotState:
    position: tuple[float, float]
    heading: float = 0.0
    linear_vel: float = 0.0
    angular_vel: float = 0.0
    footprint: ConvexPolygon = DEFAULT_FOOTPRINT

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "heading", wrap_angle(self.heading))
        if not self.footprint.contains((0.0, 0.0)):
            raise ValueError("footprint must contain the body origin")

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def y(self) -> float:
        return self.position[1]

    def world_footprint(self) -> ConvexPolygon:
        return self.footprint.posed(self.x, self.y, self.heading)


@dataclass(frozen=True)
class ControlInput:
    v: float = 0.0
    omega: float = 0.0


@dataclass(frozen=True)
class ControlLimits:
    v_max: float = 0.5
    omega_max: float = 1.5
    v_min: float = 0.0

    def check(self, u: ControlInput) -> None:
        tol = 1e-12
        if u.v > self.v_max + tol or u.v < self.v_min - tol or abs(u.v) > self.v_max + tol:
            raise ControlLimitViolation(f"v={u.v!r} outside [{self.v_min}, {self.v_max}]")
        if abs(u.omega) > self.omega_max + tol:
            raise ControlLimitViolation(f"|omega|={abs(u.omega)!r} exceeds {self.omega_max}")


def step_dynamics(state: RobotState, u: ControlInput, dt: float,
                  limits: ControlLimits | None = None, exact_arc: bool = True) -> RobotState:
    """Advance a unicycle by ``dt`` under constant control ``u``.

    The default integrates the arc in closed form; ``exact_arc=False`` gives
    forward Euler.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if limits is not None:
        limits.check(u)
    x, y, th = K.unicycle_step(state.x, state.y, state.heading, float(u.v), float(u.omega), float(dt), exact_arc)
    return replace(state, position=(x, y), heading=th, linear_vel=float(u.v), angular_vel=float(u.omega))


def min_distance(a: ConvexPolygon, b: ConvexPolygon) -> float:
    """Exact Euclidean distance between two convex polygons; 0 if they meet."""
    return float(K.polygon_distance(a.vertices, len(a.vertices), b.vertices, len(b.vertices)))


@dataclass(frozen=True)
class World:
    """Immutable obstacle set. ``bounds`` is (xmin, ymin, xmax, ymax), informational."""

    static: tuple[ConvexPolygon, ...] = ()
    dynamic: tuple[DynamicObstacle, ...] = ()
    bounds: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "static", tuple(self.static))
        object.__setattr__(self, "dynamic", tuple(self.dynamic))

    def obstacles_at(self, t: float) -> list[ConvexPolygon]:
        return list(self.static) + [d.at(t) for d in self.dynamic]

    def snapshot(self, t: float) -> "World":
        """Static world with every dynamic obstacle frozen at its pose at ``t``."""
        return World(tuple(self.obstacles_at(t)), (), self.bounds)

    @cached_property
    def packed(self):
        """Padded arrays consumed by the compiled clearance kernels."""
        shapes = list(self.static) + [d.shape for d in self.dynamic]
        n = len(shapes)
        vmax = max((len(s.vertices) for s in shapes), default=3)
        verts = np.zeros((n, vmax, 2))
        counts = np.zeros(n, dtype=np.int64)
        centers = np.zeros((n, 2))
        radii = np.zeros(n)
        vel = np.zeros((n, 2))
        t_from = np.zeros(n)
        for i, s in enumerate(shapes):
            verts[i, : len(s.vertices)] = s.vertices
            counts[i] = len(s.vertices)
            centers[i] = s.centroid
            radii[i] = s.radius
        for j, d in enumerate(self.dynamic):
            vel[len(self.static) + j] = d.velocity
            t_from[len(self.static) + j] = d.active_from
        return verts, counts, centers, radii, vel, t_from


def clearance(state: RobotState, world: World, t: float = 0.0, staleness: float = 0.0) -> float:
    """Distance from the robot's world-frame footprint to the nearest obstacle.

    Obstacles are evaluated at ``t - staleness`` to model acting on an outdated
    map. Returns +inf for an obstacle-free world.
    """
    fp = state.footprint
    return float(K.footprint_clearance(
        state.x, state.y, state.heading, fp.vertices, fp.origin_radius,
        *world.packed, float(t - staleness), math.inf))


# ---------------------------------------------------------------------------
# path following


@dataclass(frozen=True)
class Polyline:
    points: np.ndarray
    cumlen: np.ndarray = field(repr=False)

    @classmethod
    def of(cls, path) -> "Polyline":
        pts = np.atleast_2d(np.asarray(path, dtype=float))
        seg = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
        return cls(pts, np.concatenate([[0.0], np.cumsum(seg)]))

    @property
    def length(self) -> float:
        return float(self.cumlen[-1])

    def point_at(self, s: float) -> np.ndarray:
        if len(self.points) == 1:
            return self.points[0].copy()
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cumlen, s, side="right")) - 1
        i = min(i, len(self.points) - 2)
        seg = self.cumlen[i + 1] - self.cumlen[i]
        t = 0.0 if seg == 0 else (s - self.cumlen[i]) / seg
        return self.points[i] + t * (self.points[i + 1] - self.points[i])

    def project(self, point, s_min: float = 0.0, s_max: float = math.inf) -> float:
        """Arc length of the closest polyline point within [s_min, s_max]."""
        p = np.asarray(point, dtype=float)
        if len(self.points) == 1:
            return 0.0
        s_max = min(s_max, self.length)
        best_d, best_s = math.inf, s_min
        for i in range(len(self.points) - 1):
            lo, hi = self.cumlen[i], self.cumlen[i + 1]
            if hi < s_min or lo > s_max or hi == lo:
                continue
            a, b = self.points[i], self.points[i + 1]
            e = b - a
            t = float(np.dot(p - a, e) / np.dot(e, e))
            s = min(max(lo + t * (hi - lo), max(lo, s_min)), min(hi, s_max))
            q = a + (s - lo) / (hi - lo) * e
            d = float(np.hypot(*(p - q)))
            if d < best_d - 1e-12:
                best_d, best_s = d, s
        return float(best_s)


def path_waypoint_tracker(path, state: RobotState, lookahead: float, v_ref: float = 0.5,
                          omega_max: float = 1.5, goal_tolerance: float = 0.1,
                          s_hint: float | None = None) -> ControlInput:
    """Pure-pursuit control toward the path point ``lookahead`` ahead.

    The robot is projected onto the path (at or after ``s_hint`` when given);
    the target is the first path point beyond the projection whose distance
    from the robot is at least ``lookahead``, or the final point. Targets more
    than 90 degrees off the heading make the robot turn in place.
    """
    line = path if isinstance(path, Polyline) else Polyline.of(path)
    pos = np.asarray(state.position)
    goal = line.points[-1]
    if np.hypot(*(goal - pos)) <= goal_tolerance:
        return ControlInput(0.0, 0.0)
    s0 = line.project(pos, s_min=s_hint or 0.0)
    target = goal
    step = max(lookahead / 8.0, 1e-3)
    s = s0
    while s < line.length:
        s = min(s + step, line.length)
        q = line.point_at(s)
        if np.hypot(*(q - pos)) >= lookahead:
            target = q
            break
    dx, dy = target - pos
    dist = math.hypot(dx, dy)
    alpha = wrap_angle(math.atan2(dy, dx) - state.heading)
    if abs(alpha) > math.pi / 2:
        return ControlInput(0.0, math.copysign(omega_max, alpha))
    v = v_ref
    omega = v * 2.0 * math.sin(alpha) / max(dist, 1e-9)
    if abs(omega) > omega_max:
        v *= omega_max / abs(omega)
        omega = math.copysign(omega_max, omega)
    return ControlInput(v, omega)


# ---------------------------------------------------------------------------
# occupancy grid and cost-to-go


@dataclass(frozen=True, eq=False)
class CostToGo:
    """Geodesic distance to a goal over a static occupancy grid.

    Cells whose centers lie within ``inflation`` of a static obstacle are
    blocked; distances follow 8-connected grid moves. ``lookup`` interpolates
    bilinearly, skipping blocked corners, and falls back to Euclidean distance
    plus the field's maximum outside the grid.
    """

    x0: float
    y0: float
    resolution: float
    values: np.ndarray = field(repr=False)
    goal: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def build(cls, world: World, goal, resolution: float = 0.1, inflation: float = 0.1,
              bounds=None) -> "CostToGo":
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import dijkstra

        bounds = bounds or world.bounds
        if bounds is None:
            raise ValueError("a cost-to-go field needs world bounds")
        xmin, ymin, xmax, ymax = bounds
        nx = int(math.ceil((xmax - xmin) / resolution)) + 1
        ny = int(math.ceil((ymax - ymin) / resolution)) + 1
        xs = xmin + np.arange(nx) * resolution
        ys = ymin + np.arange(ny) * resolution
        gx, gy = np.meshgrid(xs, ys)
        blocked = np.zeros(gx.shape, dtype=bool)
        for poly in world.static:
            blocked |= _within(poly, gx, gy, inflation)
        idx = np.arange(nx * ny).reshape(ny, nx)
        rows, cols, wts = [], [], []
        for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
            a = idx[max(0, -dy):ny - max(0, dy), max(0, -dx):nx - max(0, dx)]
            b = idx[max(0, dy):ny + min(0, dy) or None, max(0, dx):nx + min(0, dx) or None]
            ok = ~blocked.ravel()[a.ravel()] & ~blocked.ravel()[b.ravel()]
            rows.append(a.ravel()[ok])
            cols.append(b.ravel()[ok])
            wts.append(np.full(ok.sum(), resolution * math.hypot(dx, dy)))
        r, c, w = np.concatenate(rows), np.concatenate(cols), np.concatenate(wts)
        graph = coo_matrix((np.concatenate([w, w]), (np.concatenate([r, c]), np.concatenate([c, r]))),
                           shape=(nx * ny, nx * ny)).tocsr()
        gi = int(round((goal[1] - ymin) / resolution)), int(round((goal[0] - xmin) / resolution))
        gi = (min(max(gi[0], 0), ny - 1), min(max(gi[1], 0), nx - 1))
        if blocked[gi]:
            raise ValueError(f"goal {tuple(goal)!r} lies inside an inflated obstacle")
        dist = dijkstra(graph, indices=int(idx[gi]))
        # offset from the goal's grid node to the exact goal point
        dist = dist + math.hypot(goal[0] - xs[gi[1]], goal[1] - ys[gi[0]])
        return cls(float(xmin), float(ymin), float(resolution), dist.reshape(ny, nx),
                   (float(goal[0]), float(goal[1])))

    def lookup(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.values
        ny, nx = v.shape
        fx = (pts[:, 0] - self.x0) / self.resolution
        fy = (pts[:, 1] - self.y0) / self.resolution
        ix = np.clip(np.floor(fx).astype(int), 0, nx - 2)
        iy = np.clip(np.floor(fy).astype(int), 0, ny - 2)
        tx = np.clip(fx - ix, 0.0, 1.0)
        ty = np.clip(fy - iy, 0.0, 1.0)
        corners = np.stack([v[iy, ix], v[iy, ix + 1], v[iy + 1, ix], v[iy + 1, ix + 1]], axis=1)
        wts = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], axis=1)
        finite = np.isfinite(corners)
        wsum = np.where(finite, wts, 0.0).sum(axis=1)
        val = np.where(finite, np.where(finite, corners, 0.0) * wts, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(wsum > 1e-12, val / wsum, np.inf)
        outside = (fx < 0) | (fy < 0) | (fx > nx - 1) | (fy > ny - 1)
        if np.any(outside):
            fmax = np.max(v[np.isfinite(v)])
            eu = np.hypot(pts[:, 0] - self.goal[0], pts[:, 1] - self.goal[1])
            out = np.where(outside, fmax + eu, out)
        return out


def _within(poly: ConvexPolygon, gx: np.ndarray, gy: np.ndarray, margin: float) -> np.ndarray:
    """Mask of grid points inside ``poly`` or within ``margin`` of its boundary."""
    v = poly.vertices
    inside = np.ones(gx.shape, dtype=bool)
    near = np.full(gx.shape, np.inf)
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        e = b - a
        inside &= e[0] * (gy - a[1]) - e[1] * (gx - a[0]) >= 0
        t = np.clip(((gx - a[0]) * e[0] + (gy - a[1]) * e[1]) / float(e @ e), 0.0, 1.0)
        near = np.minimum(near, np.hypot(gx - a[0] - t * e[0], gy - a[1] - t * e[1]))
    return inside | (near <= margin)
