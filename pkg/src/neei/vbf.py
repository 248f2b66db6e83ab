"""View-guided frame selection with uplink power allocation.

Every candidate frame must be delivered within one slot, which fixes its
minimum uplink power p_min = (noise / g) * (2^(S / (B T)) - 1). Since a
frame's score does not grow with extra power, the joint problem collapses to
a 0/1 knapsack: pick frames maximizing total score subject to
sum p_min <= P_tot (or, in per-frame mode, p_min <= P_max for each frame).
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .errors import TooManyFramesForExact, ZeroGain
from .geomworld import Polyline
from .nfchan import (
    ArrayGeometry,
    LinkBudget,
    PathlossModel,
    beam_gain,
    los_channel_near,
    planar_beam,
)
from ._kernels import wrap_angle

DEFAULT_PAYLOAD_BITS = 13_840_000  # 1.73 MB
EXACT_LIMIT = 24
BUDGET_MODES = ("total", "per-frame")
COMBINERS = ("near", "planar")
BASELINES = ("VBF", "NFC-throughput", "FFC", "NFC-Planar")
_REL = 1e-9


@dataclass(frozen=True)
class Frame:
    id: int
    x: float
    y: float
    theta: float = 0.0
    payload_bits: float = DEFAULT_PAYLOAD_BITS
    score: float = 0.0
    slot_duration: float = 1.0

    def __post_init__(self):
        if not self.payload_bits > 0:
            raise ValueError(f"frame {self.id}: payload_bits must be positive")
        if not (math.isfinite(self.score) and self.score >= 0):
            raise ValueError(f"frame {self.id}: score must be finite and >= 0")
        if not self.slot_duration > 0:
            raise ValueError(f"frame {self.id}: slot_duration must be positive")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class VbfProblem:
    """A selection instance.

    ``combiner`` is how the edge combines the uplink: ``"near"`` is MRC on the
    true spherical-wave channel; ``"planar"`` uses the planar-model combiner,
    which loses gain at near-field range.
    """

    frames: tuple[Frame, ...]
    geom: ArrayGeometry
    pl: PathlossModel
    budget: LinkBudget
    power_budget: float
    mode: str = "total"
    combiner: str = "near"

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError("a VBF problem needs at least one frame")
        if len({f.id for f in self.frames}) != len(self.frames):
            raise ValueError("frame ids must be unique")
        if self.mode not in BUDGET_MODES:
            raise ValueError(f"budget mode must be one of {BUDGET_MODES}")
        if self.combiner not in COMBINERS:
            raise ValueError(f"combiner must be one of {COMBINERS}")
        if not self.power_budget >= 0:
            raise ValueError("power_budget must be >= 0")

    def min_powers(self) -> np.ndarray:
        return np.array([min_power(f, self.geom, self.pl, self.budget, self.combiner) for f in self.frames])

    def scores(self) -> np.ndarray:
        return np.array([f.score for f in self.frames], dtype=float)


@dataclass(frozen=True)
class VbfSolution:
    selected: frozenset[int]
    powers: dict[int, float] = field(hash=False)
    total_score: float
    total_power: float

    def is_feasible(self, problem: VbfProblem) -> bool:
        """Per-frame delivery and the budget, both at 1e-9 relative."""
        by_id = {f.id: f for f in problem.frames}
        for i in self.selected:
            f = by_id[i]
            g = uplink_gain(f, problem.geom, problem.pl, problem.combiner)
            bits = problem.budget.bandwidth * f.slot_duration * math.log2(
                1 + self.powers[i] * g / problem.budget.noise_power)
            if bits < f.payload_bits * (1 - _REL):
                return False
            if problem.mode == "per-frame" and self.powers[i] > problem.power_budget * (1 + _REL):
                return False
        if problem.mode == "total" and self.total_power > problem.power_budget * (1 + _REL):
            return False
        return True


def frame_score_proxy(frame_pose, training_poses, length_scale: float, angle_scale: float) -> float:
    """Novelty of a view relative to the views the edge model was trained on.

    Poses are (x, y, heading). The score is 1 - exp(-m), where m is the
    smallest combined position and heading offset to any training pose.
    """
    train = np.atleast_2d(np.asarray(training_poses, dtype=float))
    if train.shape[0] == 0:
        raise ValueError("training pose set is empty")
    x, y, th = (float(v) for v in frame_pose)
    dpos = np.hypot(train[:, 0] - x, train[:, 1] - y)
    dang = np.abs([wrap_angle(th - t) for t in train[:, 2]])
    m = float(np.min(dpos / length_scale + dang / angle_scale))
    return float(-np.expm1(-m)) if math.isfinite(m) else 1.0


def uplink_gain(frame: Frame, geom: ArrayGeometry, pl: PathlossModel, combiner: str = "near") -> float:
    h = los_channel_near(geom, frame.position, pl)
    if combiner == "near":
        return h.power
    return beam_gain(h, planar_beam(geom, frame.position, pl))


def min_power(frame: Frame, geom: ArrayGeometry, pl: PathlossModel, budget: LinkBudget,
              combiner: str = "near") -> float:
    """Smallest transmit power delivering the frame's payload in one slot."""
    g = uplink_gain(frame, geom, pl, combiner)
    if not g > 0:
        raise ZeroGain(f"frame {frame.id}: uplink gain is zero")
    se = frame.payload_bits / (budget.bandwidth * frame.slot_duration)
    return budget.noise_power / g * math.expm1(se * math.log(2.0))


def _solution(problem: VbfProblem, picked: Iterable[int], p: np.ndarray) -> VbfSolution:
    idx = sorted(picked)
    ids = [problem.frames[i].id for i in idx]
    return VbfSolution(
        frozenset(ids),
        {fid: float(p[i]) for fid, i in zip(ids, idx)},
        float(sum(problem.frames[i].score for i in idx)),
        float(sum(p[i] for i in idx)),
    )


def _per_frame(problem: VbfProblem, values: np.ndarray, p: np.ndarray) -> VbfSolution:
    ok = (p <= problem.power_budget) & (values > 0)
    return _solution(problem, np.flatnonzero(ok), p)


def _lex_key(problem: VbfProblem, mask: int) -> tuple[int, ...]:
    return tuple(sorted(problem.frames[i].id for i in range(len(problem.frames)) if mask >> i & 1))


def solve_exact(problem: VbfProblem, values: np.ndarray | None = None, chunk_bits: int = 16) -> VbfSolution:
    """Enumerate every subset of at most 24 frames.

    Maximizes total value (scores by default) under the budget; ties go to the
    lower total power, then the lexicographically smallest sorted id tuple.
    Sums that agree to 1e-12 relative count as ties.
    """
    n = len(problem.frames)
    if n > EXACT_LIMIT:
        raise TooManyFramesForExact(f"{n} frames exceeds the exhaustive limit of {EXACT_LIMIT}")
    p = problem.min_powers()
    v = problem.scores() if values is None else np.asarray(values, dtype=float)
    if problem.mode == "per-frame":
        return _per_frame(problem, v, p)
    cap = problem.power_budget
    v_tol = 1e-12 * max(1.0, float(np.abs(v).sum()))
    p_tol = 1e-12 * max(1e-300, float(p.sum()))
    bits = np.arange(n, dtype=np.int64)
    step = 1 << min(n, chunk_bits)
    cands: list[tuple[float, float, int]] = []
    best_v = -math.inf
    for start in range(0, 1 << n, step):
        masks = np.arange(start, start + step, dtype=np.int64)
        member = ((masks[:, None] >> bits) & 1).astype(float)
        pw = member @ p
        val = member @ v
        ok = pw <= cap
        if not ok.any():
            continue
        top = float(val[ok].max())
        if top < best_v - v_tol:
            continue
        keep = ok & (val >= top - v_tol)
        cands.extend(zip(val[keep].tolist(), pw[keep].tolist(), masks[keep].tolist()))
        best_v = max(best_v, top)
        cands = [c for c in cands if c[0] >= best_v - v_tol]
        min_p = min(c[1] for c in cands)
        cands = [c for c in cands if c[1] <= min_p + p_tol]
    cands.sort(key=lambda c: _lex_key(problem, c[2]))
    mask = cands[0][2]
    return _solution(problem, [i for i in range(n) if mask >> i & 1], p)


def solve_mip(problem: VbfProblem, values: np.ndarray | None = None) -> VbfSolution:
    """Exact 0/1 knapsack through the HiGHS MILP solver, for any size.

    A tiny tie-break term prefers lower total power among equal-value sets.
    The rounded solution is re-checked against the budget; if the solver's
    feasibility tolerance let it overshoot, the budget is tightened and the
    solve repeated.
    """
    p = problem.min_powers()
    v = problem.scores() if values is None else np.asarray(values, dtype=float)
    if problem.mode == "per-frame":
        return _per_frame(problem, v, p)
    n = len(p)
    scale = float(p.max()) if p.max() > 0 else 1.0
    ps = p / scale
    cap = problem.power_budget / scale
    pos = v[v > 0]
    eps = 1e-9 * (float(pos.min()) if pos.size else 1.0) / max(1.0, float(ps.sum()))
    c = -(v - eps * ps)
    rhs = cap
    for _ in range(5):
        res = milp(c, constraints=LinearConstraint(ps[None, :], -np.inf, rhs),
                   integrality=np.ones(n), bounds=Bounds(0, 1),
                   options={"mip_rel_gap": 0.0, "presolve": True})
        if res.x is None:
            return _solution(problem, [], p)
        x = np.round(res.x).astype(bool)
        over = float(ps[x].sum()) - cap
        if over <= 1e-12 * max(cap, 1e-300):
            return _solution(problem, np.flatnonzero(x), p)
        rhs -= 2 * over
    raise RuntimeError("MILP solver could not return a budget-feasible selection")


def solve_greedy(problem: VbfProblem, values: np.ndarray | None = None, max_seeds: int = 20_000) -> VbfSolution:
    """Partial enumeration with density-ordered filling, then swap passes.

    Every set of up to three frames (fewer when that would exceed
    ``max_seeds`` starting sets) is forced in and the rest of the budget is
    filled in density order; the best start is kept. Within a fill, frames are
    admitted in descending value/p_min order (ties by id) while
    they fit. Each swap pass then visits every unselected frame, in the
    same order, and tries bringing it in either by evicting the least dense
    selected frames until it fits or by evicting any single selected frame.
    Freed room is refilled in density order and the best trial is kept when
    it raises the total value. Passes repeat until one makes no change.
    """
    p = problem.min_powers()
    v = problem.scores() if values is None else np.asarray(values, dtype=float)
    if problem.mode == "per-frame":
        return _per_frame(problem, v, p)
    cap = problem.power_budget
    ids = np.array([f.id for f in problem.frames])
    density = np.where(p > 0, v / np.where(p > 0, p, 1.0), np.inf)
    order = [int(i) for i in np.lexsort((ids, -density)) if v[i] > 0]
    rank = {i: k for k, i in enumerate(order)}

    def fill(picked, used):
        for i in order:
            if i not in picked and used + p[i] <= cap:
                picked.add(i)
                used += p[i]
        return used

    picked: set[int] = set()
    used = fill(picked, 0.0)
    best_val = v[list(picked)].sum()
    depth = max((k for k in (1, 2, 3) if math.comb(len(order), k) <= max_seeds), default=0)
    for seed in itertools.chain.from_iterable(itertools.combinations(order, k) for k in range(1, depth + 1)):
        seed_used = float(sum(p[i] for i in seed))
        if seed_used > cap:
            continue
        trial = set(seed)
        t_used = fill(trial, seed_used)
        val = v[list(trial)].sum()
        if val > best_val + 1e-12:
            best_val, picked, used = val, trial, t_used
    for _ in range(len(order)):
        improved = False
        for j in order:
            if j in picked or p[j] > cap:
                continue
            trials = []
            chain, c_used = set(picked), used
            for i in sorted(picked, key=rank.__getitem__, reverse=True):
                if c_used + p[j] <= cap:
                    break
                chain.discard(i)
                c_used -= p[i]
            trials.append((chain, c_used))
            for i in picked:
                if used - p[i] + p[j] <= cap:
                    trials.append((picked - {i}, used - p[i]))
            best_val = v[list(picked)].sum() + 1e-12
            for trial, t_used in trials:
                trial = trial | {j}
                t_used = fill(trial, t_used + p[j])
                val = v[list(trial)].sum()
                if val > best_val:
                    best_val, picked, used = val, trial, t_used
                    improved = True
        if not improved:
            break
    return _solution(problem, picked, p)


def solve(problem: VbfProblem, values: np.ndarray | None = None) -> VbfSolution:
    """Optimal selection: enumeration when small, MILP otherwise."""
    if len(problem.frames) <= 12:
        return solve_exact(problem, values)
    return solve_mip(problem, values)


def solve_throughput(problem: VbfProblem) -> VbfSolution:
    """Maximize the number of delivered frames, ignoring scores.

    With unit values the optimum takes frames in ascending p_min (ties by id)
    until the budget is exhausted.
    """
    p = problem.min_powers()
    if problem.mode == "per-frame":
        return _per_frame(problem, np.ones(len(p)), p)
    ids = np.array([f.id for f in problem.frames])
    picked, used = [], 0.0
    for i in np.lexsort((ids, p)):
        if used + p[i] > problem.power_budget:
            break
        picked.append(int(i))
        used += p[i]
    return _solution(problem, picked, p)


# ---------------------------------------------------------------------------
# episodes


@dataclass
class VbfReport:
    baseline: str
    solution: VbfSolution
    frames: tuple[Frame, ...]
    p_min: np.ndarray

    REPORT_COLUMNS = ("frame_id", "selected", "p_min_w", "score")

    @property
    def total_score(self) -> float:
        return self.solution.total_score

    @property
    def frames_delivered(self) -> int:
        return len(self.solution.selected)

    @property
    def power_used(self) -> float:
        return self.solution.total_power

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.REPORT_COLUMNS)
            for f, pm in zip(self.frames, self.p_min):
                w.writerow([f.id, int(f.id in self.solution.selected), _fmt(pm), _fmt(f.score)])


def run_vbf_episode(frames: Sequence[Frame], nfc_geom: ArrayGeometry, ffc_geom: ArrayGeometry,
                    pl: PathlossModel, budget: LinkBudget, power_budget: float, baseline: str,
                    mode: str = "total") -> VbfReport:
    """Frame selection under one of the compared schemes.

    VBF and NFC-throughput use MRC on the 640-element array; FFC and
    NFC-Planar keep the VBF objective but combine with the planar model
    (on the small far-field array and on the large array respectively).
    """
    if baseline not in BASELINES:
        raise ValueError(f"unknown baseline {baseline!r}; expected one of {BASELINES}")
    geom, combiner = {
        "VBF": (nfc_geom, "near"),
        "NFC-throughput": (nfc_geom, "near"),
        "FFC": (ffc_geom, "planar"),
        "NFC-Planar": (nfc_geom, "planar"),
    }[baseline]
    prob = VbfProblem(tuple(frames), geom, pl, budget, power_budget, mode, combiner)
    sol = solve_throughput(prob) if baseline == "NFC-throughput" else solve(prob)
    return VbfReport(baseline, sol, prob.frames, prob.min_powers())


# ---------------------------------------------------------------------------
# frame sources


def poses_along(path, count: int, jitter: float = 0.0, rng=None) -> np.ndarray:
    """``count`` evenly spaced (x, y, heading) poses along a polyline.

    Headings follow the path tangent. ``jitter`` adds Gaussian position and
    heading noise (same standard deviation in meters and radians).
    """
    line = Polyline.of(path)
    if count < 1:
        return np.zeros((0, 3))
    s = np.linspace(0.0, line.length, count) if count > 1 else np.array([0.0])
    eps = max(1e-6, 1e-4 * line.length)
    out = np.empty((count, 3))
    for k, sk in enumerate(s):
        a = line.point_at(max(sk - eps, 0.0))
        b = line.point_at(min(sk + eps, line.length))
        out[k, :2] = line.point_at(sk)
        out[k, 2] = math.atan2(b[1] - a[1], b[0] - a[0])
    if jitter > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        out += rng.normal(0.0, jitter, out.shape)
        out[:, 2] = [wrap_angle(t) for t in out[:, 2]]
    return out


def frames_from_poses(poses, training_poses, length_scale: float, angle_scale: float,
                      payload_bits: float = DEFAULT_PAYLOAD_BITS, slot_duration: float = 1.0) -> list[Frame]:
    return [
        Frame(k, float(x), float(y), float(th), payload_bits,
              frame_score_proxy((x, y, th), training_poses, length_scale, angle_scale), slot_duration)
        for k, (x, y, th) in enumerate(np.asarray(poses, dtype=float))
    ]


FRAME_COLUMNS = ("id", "x", "y", "theta", "score", "payload_bits")


def read_frames(path, training_poses=None, length_scale: float = 1.0, angle_scale: float = 1.0,
                slot_duration: float = 1.0) -> list[Frame]:
    """Frame list CSV; a missing score is filled from the proxy (needs training poses)."""
    frames = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            x, y, th = float(row["x"]), float(row["y"]), float(row.get("theta") or 0.0)
            raw = (row.get("score") or "").strip()
            if raw:
                score = float(raw)
            elif training_poses is not None:
                score = frame_score_proxy((x, y, th), training_poses, length_scale, angle_scale)
            else:
                raise ValueError(f"frame {row['id']}: no score and no training poses to derive one")
            bits = float(row.get("payload_bits") or DEFAULT_PAYLOAD_BITS)
            frames.append(Frame(int(row["id"]), x, y, th, bits, score, slot_duration))
    return frames


def write_frames(frames: Iterable[Frame], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_COLUMNS)
        for f in frames:
            w.writerow([f.id, _fmt(f.x), _fmt(f.y), _fmt(f.theta), _fmt(f.score), _fmt(f.payload_bits)])


def _fmt(x: float) -> str:
    return f"{x:.11e}"
