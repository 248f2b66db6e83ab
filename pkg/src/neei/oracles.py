"""Brute-force reference computations used to check the fast solvers.

Each oracle trades speed for an implementation that shares no code path with
the production routine it checks: boundary sampling for polygon distance,
itertools subset enumeration for frame selection, and direct per-element
phase comparison for the near/far-field boundary.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .errors import InstanceTooLarge
from .geomworld import ConvexPolygon, min_distance
from .nfchan import (
    ArrayGeometry,
    LinkBudget,
    PathlossModel,
    element_positions,
    rayleigh_distance,
)
from .vbf import Frame, VbfProblem, solve_exact, solve_greedy

ENUM_LIMIT = 16


# ---------------------------------------------------------------------------
# geometry


def random_convex_polygon(rng: np.random.Generator, center, radius: float, max_points: int = 9) -> ConvexPolygon:
    """Convex hull of a handful of uniform points in a disc."""
    while True:
        k = int(rng.integers(3, max_points + 1))
        r = radius * np.sqrt(rng.uniform(0.05, 1.0, k))
        a = rng.uniform(0.0, 2.0 * math.pi, k)
        pts = np.column_stack([r * np.cos(a), r * np.sin(a)]) + np.asarray(center, dtype=float)
        try:
            hull = ConvexHull(pts)
            return ConvexPolygon(pts[hull.vertices])
        except Exception:  # degenerate draw (collinear or near-duplicate points)
            continue


def sample_boundary(poly: ConvexPolygon, count: int) -> np.ndarray:
    """``count`` points spread along the perimeter in proportion to edge length."""
    v = poly.vertices
    e = np.roll(v, -1, axis=0) - v
    lengths = np.hypot(e[:, 0], e[:, 1])
    s = np.linspace(0.0, lengths.sum(), count, endpoint=False)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(v) - 1)
    t = (s - cum[k]) / lengths[k]
    return v[k] + t[:, None] * e[k]


def _inside(poly: ConvexPolygon, pts: np.ndarray) -> np.ndarray:
    v = poly.vertices
    e = np.roll(v, -1, axis=0) - v
    rel = pts[:, None, :] - v[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    return np.all(cross >= 0.0, axis=1)


def _to_edges(pts: np.ndarray, poly: ConvexPolygon) -> float:
    """Smallest distance from any of ``pts`` to the boundary of ``poly``."""
    a = poly.vertices
    e = np.roll(a, -1, axis=0) - a
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip((rel * e[None]).sum(axis=2) / (e * e).sum(axis=1)[None], 0.0, 1.0)
    d = rel - t[:, :, None] * e[None]
    return float(np.sqrt((d ** 2).sum(axis=2).min()))


def sampled_distance(a: ConvexPolygon, b: ConvexPolygon, samples: int = 10_000) -> float:
    """Distance estimate from dense boundary samples of both polygons.

    Returns 0 if any sample of one lies inside the other. Otherwise each
    sample is measured against the other polygon's edges and the smallest
    value wins; the error is bounded by the sample spacing.
    """
    pa = sample_boundary(a, samples)
    pb = sample_boundary(b, samples)
    if _inside(b, pa).any() or _inside(a, pb).any():
        return 0.0
    return min(_to_edges(pa, b), _to_edges(pb, a))


@dataclass(frozen=True)
class GeomRow:
    pair: int
    exact: float
    sampled: float

    @property
    def deviation(self) -> float:
        return abs(self.exact - self.sampled)


def geom_oracle(pairs: int = 100, samples: int = 10_000, seed: int = 0) -> list[GeomRow]:
    """``min_distance`` against boundary sampling on random convex pairs."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(pairs):
        a = random_convex_polygon(rng, rng.uniform(-2, 2, 2), rng.uniform(0.3, 1.5))
        b = random_convex_polygon(rng, rng.uniform(-2, 2, 2), rng.uniform(0.3, 1.5))
        rows.append(GeomRow(k, min_distance(a, b), sampled_distance(a, b, samples)))
    return rows


# ---------------------------------------------------------------------------
# frame selection


def random_vbf_problem(rng: np.random.Generator, n_frames: int, geom: ArrayGeometry, pl: PathlossModel,
                       budget: LinkBudget, budget_fraction: tuple[float, float] = (0.15, 0.6)) -> VbfProblem:
    """Frames scattered 2 to 12 m in front of the array with uniform scores.

    The power budget is a random fraction of the sum of minimum powers, so
    the knapsack constraint binds.
    """
    c = np.asarray(geom.center)
    normal = np.array([-geom.axis[1], geom.axis[0]])
    frames = []
    for i in range(n_frames):
        r = rng.uniform(2.0, 12.0)
        ang = rng.uniform(-1.2, 1.2)
        pos = c + r * (math.cos(ang) * normal + math.sin(ang) * np.asarray(geom.axis))
        frames.append(Frame(i, float(pos[0]), float(pos[1]), 0.0, score=float(rng.uniform(0.05, 1.0))))
    prob = VbfProblem(tuple(frames), geom, pl, budget, 0.0)
    total = float(prob.min_powers().sum())
    return VbfProblem(prob.frames, geom, pl, budget, total * float(rng.uniform(*budget_fraction)))


def enumerate_best(problem: VbfProblem) -> tuple[float, frozenset[int]]:
    """Best total score by listing every subset with itertools."""
    n = len(problem.frames)
    if n > ENUM_LIMIT:
        raise InstanceTooLarge(f"{n} frames exceeds the enumeration limit of {ENUM_LIMIT}")
    p = problem.min_powers()
    v = problem.scores()
    best, best_set = 0.0, frozenset()
    for size in range(1, n + 1):
        for combo in itertools.combinations(range(n), size):
            if sum(p[i] for i in combo) <= problem.power_budget:
                val = sum(v[i] for i in combo)
                if val > best + 1e-12:
                    best, best_set = val, frozenset(problem.frames[i].id for i in combo)
    return best, best_set


@dataclass(frozen=True)
class VbfRow:
    instance: int
    frames: int
    enumerated: float
    exact: float
    greedy: float

    @property
    def ratio(self) -> float:
        return self.greedy / self.exact if self.exact > 0 else 1.0


def vbf_oracle(instances: int = 200, max_frames: int = 12, seed: int = 0) -> list[VbfRow]:
    """Enumeration, ``solve_exact`` and ``solve_greedy`` on random instances."""
    if max_frames > ENUM_LIMIT:
        raise InstanceTooLarge(f"{max_frames} frames exceeds the enumeration limit of {ENUM_LIMIT}")
    geom = ArrayGeometry(640, 30e9, center=(0.0, 0.0), axis=(1.0, 0.0))
    pl = PathlossModel(10 ** -6.2, 3.0)
    budget = LinkBudget.from_dbm(20.0, -80.0, 1e7)
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(instances):
        prob = random_vbf_problem(rng, int(rng.integers(1, max_frames + 1)), geom, pl, budget)
        enum, _ = enumerate_best(prob)
        rows.append(VbfRow(k, len(prob.frames), enum, solve_exact(prob).total_score,
                           solve_greedy(prob).total_score))
    return rows


# ---------------------------------------------------------------------------
# near/far-field boundary


@dataclass(frozen=True)
class RayleighRow:
    num_elements: int
    carrier_freq: float
    aperture: float
    wavelength: float
    rayleigh: float


def rayleigh_table(configs=((640, 30e9), (32, 1.5e9))) -> list[RayleighRow]:
    rows = []
    for n, fc in configs:
        g = ArrayGeometry(n, fc)
        rows.append(RayleighRow(n, fc, g.aperture, g.wavelength, 2 * g.aperture ** 2 / g.wavelength))
        assert math.isclose(rows[-1].rayleigh, rayleigh_distance(g), rel_tol=1e-12)
    return rows


def max_phase_error(geom: ArrayGeometry, target) -> float:
    """Largest per-element phase gap (radians, unwrapped) between the two models.

    Computed from path lengths: exact element distances against the planar
    expansion d - offset * cos(psi).
    """
    t = np.asarray(target, dtype=float)
    exact = np.hypot(*(element_positions(geom) - t).T)
    rel = t - np.asarray(geom.center)
    d = float(np.hypot(*rel))
    planar = d - geom.offsets() * float(rel @ np.asarray(geom.axis)) / d
    return float(2 * math.pi * np.max(np.abs(exact - planar)) / geom.wavelength)


def phase_error_sweep(geom: ArrayGeometry, distances) -> list[tuple[float, float]]:
    """(distance, max phase error) along a ray 60 degrees off the array axis."""
    ang = math.radians(60.0)
    u = np.array([math.cos(ang), math.sin(ang)])
    ax = np.asarray(geom.axis)
    direction = u[0] * ax + u[1] * np.array([-ax[1], ax[0]])
    c = np.asarray(geom.center)
    return [(float(d), max_phase_error(geom, c + d * direction)) for d in distances]
