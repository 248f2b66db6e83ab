"""Radio-aware receding-horizon planning.

The planner is a cross-entropy search over (v, omega) control sequences.
Each rollout is scored by

    J = radio_weight * sum_k rate(x_k) + progress_weight * (d_goal(x_0) - d_goal(x_H))
        - effort_weight * sum_k (|v_k - v_{k-1}| + |w_k - w_{k-1}|)

where rate(x) assumes the edge focuses perfectly on the predicted pose.
Rollouts whose footprint comes within ``safety_distance`` of an obstacle at
any step are discarded.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import NoFeasiblePlan
from .geomworld import ControlInput, ControlLimits, CostToGo, RobotState, World, clearance, step_dynamics
from .nfchan import (
    ArrayGeometry,
    LinkBudget,
    NlosParams,
    PathlossModel,
    apply_nlos,
    beam_gain,
    element_positions,
    focused_beam,
    los_channel_near,
    planar_beam,
    rate,
    snr,
)

VARIANTS = ("REP", "NFC-baseline", "FFC-baseline", "NFC-Planar")


@dataclass(frozen=True)
class RepConfig:
    horizon: int = 20
    dt: float = 0.1
    safety_distance: float = 0.1
    goal: tuple[float, float] = (0.0, 0.0)
    goal_tolerance: float = 0.2
    radio_weight: float = 0.0
    progress_weight: float = 1.0
    effort_weight: float = 0.01
    v_ref: float = 0.5
    candidate_count: int = 256
    elite_frac: float = 0.1
    iterations: int = 4
    rng_seed: int = 0
    limits: ControlLimits = ControlLimits()
    init_std: tuple[float, float] = (0.25, 0.8)
    min_std: tuple[float, float] = (0.02, 0.05)
    exact_arc: bool = True
    noise_correlation: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.safety_distance < 0:
            raise ValueError("safety_distance must be >= 0")
        for name in ("radio_weight", "progress_weight", "effort_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 < self.elite_frac <= 1:
            raise ValueError("elite_frac must be in (0, 1]")
        if not 0 <= self.noise_correlation < 1:
            raise ValueError("noise_correlation must be in [0, 1)")
        if self.candidate_count < 1 or self.iterations < 1:
            raise ValueError("candidate_count and iterations must be >= 1")


@dataclass(frozen=True)
class ChannelEnv:
    """Radio side of a planning or evaluation problem.

    ``beam_model`` selects the channel model the edge uses to design its beam:
    ``"near"`` (spherical wave, focusing) or ``"planar"`` (steering).
    """

    geom: ArrayGeometry
    pl: PathlossModel
    budget: LinkBudget
    beam_model: str = "near"
    nlos: NlosParams = NlosParams()
    common_distance: bool = False

    def __post_init__(self):
        if self.beam_model not in ("near", "planar"):
            raise ValueError(f"unknown beam model {self.beam_model!r}")

    @cached_property
    def elements(self) -> np.ndarray:
        return element_positions(self.geom)


def step_reward(state: RobotState, channel_env: ChannelEnv, budget: LinkBudget | None = None) -> float:
    """Rate (bits/s) at the state's position under perfect near-field focusing."""
    budget = budget or channel_env.budget
    g = K.focus_gain(state.x, state.y, channel_env.elements, channel_env.pl.reference_loss,
                     channel_env.pl.exponent, channel_env.common_distance, *channel_env.geom.center)
    return rate(budget, snr(g, budget))


def realized_rate(position, channel_env: ChannelEnv, nlos_seed: int = 0) -> float:
    """Rate actually delivered at ``position``.

    The beam is designed from the env's ``beam_model`` on the LoS channel and
    applied to the true near-field channel (plus NLoS when enabled).
    """
    env = channel_env
    h = los_channel_near(env.geom, position, env.pl, common_distance=env.common_distance)
    if env.beam_model == "near":
        w = focused_beam(env.geom, position, env.pl)
    else:
        w = planar_beam(env.geom, position, env.pl)
    if math.isfinite(env.nlos.rician_k):
        h = apply_nlos(h, env.nlos, nlos_seed)
    return rate(env.budget, snr(beam_gain(h, w), env.budget))


@dataclass
class PlanResult:
    controls: list[ControlInput]
    states: list[RobotState]
    predicted_rates: list[float]
    cost: float
    feasible: bool
    iteration_costs: list[float] = field(default_factory=list)
    mean_controls: np.ndarray | None = field(default=None, repr=False)


def _score(states, rates, controls, state0, cfg: RepConfig, radio_weight, cost_to_go=None):
    d0 = math.inf if cost_to_go is None else float(cost_to_go.lookup(state0.position)[0])
    if math.isfinite(d0):
        dh = cost_to_go.lookup(states[:, -1, :2])
        dh = np.where(np.isfinite(dh), dh, d0 + 1e6)
    else:
        # no field, or the start is cut off from the goal: straight-line progress
        goal = np.asarray(cfg.goal)
        d0 = math.hypot(state0.x - goal[0], state0.y - goal[1])
        dh = np.hypot(states[:, -1, 0] - goal[0], states[:, -1, 1] - goal[1])
    prev = np.concatenate(
        [np.broadcast_to([state0.linear_vel, state0.angular_vel], (len(controls), 1, 2)), controls[:, :-1]], axis=1)
    effort = np.abs(controls - prev).sum(axis=(1, 2))
    j = cfg.progress_weight * (d0 - dh) - cfg.effort_weight * effort
    if radio_weight > 0:
        j = j + radio_weight * rates.sum(axis=1)
    return j


def _noise(rng, C: int, H: int, rho: float) -> np.ndarray:
    """Unit-variance Gaussian noise, AR(1)-correlated along the horizon."""
    eps = rng.standard_normal((C, H, 2))
    if rho > 0:
        scale = math.sqrt(1.0 - rho * rho)
        for k in range(1, H):
            eps[:, k] = rho * eps[:, k - 1] + scale * eps[:, k]
    return eps


def plan(state: RobotState, world: World, cfg: RepConfig, channel_env: ChannelEnv | None = None,
         t: float = 0.0, warm_start: np.ndarray | None = None, rng=None,
         cost_to_go: CostToGo | None = None) -> PlanResult:
    """Cross-entropy receding-horizon plan from ``state`` at world time ``t``.

    Goal progress is the drop in straight-line distance to ``cfg.goal``, or
    in geodesic distance when a ``cost_to_go`` field for that goal is given
    (which keeps the short horizon from stalling in front of obstacles).

    ``warm_start`` is an (H, 2) initial mean for the sampling distribution.
    The best rollout found so far is re-entered as candidate 0 of every later
    iteration, so the best cost never increases across iterations; candidate
    1 is always the stop-in-place sequence (clipped to the limits). Raises
    NoFeasiblePlan when no sampled rollout keeps the safety distance.
    """
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    lim = cfg.limits
    H, C = cfg.horizon, cfg.candidate_count
    lo = np.array([lim.v_min, -lim.omega_max])
    hi = np.array([lim.v_max, lim.omega_max])
    if warm_start is None:
        mean = np.tile([min(cfg.v_ref, lim.v_max), 0.0], (H, 1))
    else:
        mean = np.clip(np.asarray(warm_start, dtype=float).reshape(H, 2), lo, hi)
    std = np.tile(np.asarray(cfg.init_std, dtype=float), (H, 1))
    min_std = np.asarray(cfg.min_std, dtype=float)
    n_elite = max(1, int(math.ceil(cfg.elite_frac * C)))

    radio_weight = cfg.radio_weight if channel_env is not None else 0.0
    if radio_weight > 0:
        env = channel_env
        elems = env.elements
        radio = (elems, env.pl.reference_loss, env.pl.exponent, env.common_distance,
                 env.geom.center[0], env.geom.center[1], env.geom.axis[0], env.geom.axis[1],
                 env.geom.element_spacing,
                 env.budget.tx_power / env.budget.noise_power, env.budget.bandwidth, True)
    else:
        radio = (np.zeros((0, 2)), 1.0, 2.0, False, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, False)
    fp = state.footprint
    # clearance beyond the cutoff is irrelevant to feasibility and lets far obstacles be skipped
    geo = (fp.vertices, fp.origin_radius, *world.packed, cfg.safety_distance + 0.5)

    best_j = -math.inf
    best = None
    history = []
    for it in range(cfg.iterations):
        seqs = mean[None] + std[None] * _noise(rng, C, H, cfg.noise_correlation)
        seqs[0] = mean if best is None else best[0]
        if C > 1:
            # stopping is always a candidate, so a cornered robot still has a feasible seed
            seqs[1] = 0.0
        np.clip(seqs, lo, hi, out=seqs)
        states, clear, rates = K.rollout_batch(
            state.x, state.y, state.heading, seqs, cfg.dt, t, cfg.exact_arc, *geo, *radio)
        feasible = clear.min(axis=1) >= cfg.safety_distance
        j = _score(states, rates, seqs, state, cfg, radio_weight, cost_to_go)
        j = np.where(feasible, j, -np.inf)
        i_best = int(np.argmax(j))
        if j[i_best] > best_j:
            best_j = float(j[i_best])
            best = (seqs[i_best].copy(), states[i_best].copy(), rates[i_best].copy())
        history.append(-best_j)
        n_feas = int(feasible.sum())
        if n_feas == 0:
            # steer toward the least-violating rollouts and widen the search
            order = np.argsort(-clear.min(axis=1), kind="stable")[:n_elite]
            mean = seqs[order].mean(axis=0)
            std = np.minimum(std * 1.5, (hi - lo) / 2.0)
            continue
        order = np.argsort(-j, kind="stable")[: min(n_elite, n_feas)]
        elite = seqs[order]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), min_std) if len(elite) > 1 else np.maximum(std * 0.5, min_std)

    if best is None:
        raise NoFeasiblePlan(f"all {C * cfg.iterations} sampled rollouts violate the safety distance")
    ctrl, st, rt = best
    controls = [ControlInput(float(v), float(w)) for v, w in ctrl]
    states_out = [state]
    for k in range(H):
        states_out.append(replace(state, position=(float(st[k + 1, 0]), float(st[k + 1, 1])),
                                  heading=float(st[k + 1, 2]),
                                  linear_vel=controls[k].v, angular_vel=controls[k].omega))
    if radio_weight == 0 and channel_env is not None:
        rt = np.array([step_reward(s, channel_env) for s in states_out[1:]])
    return PlanResult(controls, states_out, [float(r) for r in rt], -best_j, True, history, mean)


# ---------------------------------------------------------------------------
# closed-loop episodes


@dataclass(frozen=True)
class RepTask:
    """Everything a closed-loop planning episode needs."""

    world: World
    start: RobotState
    cfg: RepConfig
    nfc_geom: ArrayGeometry
    ffc_geom: ArrayGeometry
    pl: PathlossModel
    budget: LinkBudget
    nlos: NlosParams = NlosParams()
    time_limit: float = 60.0
    common_distance: bool = False
    grid_resolution: float = 0.1

    @cached_property
    def cost_to_go(self) -> CostToGo | None:
        if self.world.bounds is None:
            return None
        return CostToGo.build(self.world, self.cfg.goal, self.grid_resolution)

    def planning_env(self) -> ChannelEnv:
        return ChannelEnv(self.nfc_geom, self.pl, self.budget, "near", self.nlos, self.common_distance)

    def evaluation_env(self, variant: str) -> ChannelEnv:
        geom, model = {
            "REP": (self.nfc_geom, "near"),
            "NFC-baseline": (self.nfc_geom, "near"),
            "FFC-baseline": (self.ffc_geom, "planar"),
            "NFC-Planar": (self.nfc_geom, "planar"),
        }[variant]
        return ChannelEnv(geom, self.pl, self.budget, model, self.nlos, self.common_distance)


@dataclass(frozen=True)
class TraceRow:
    t: float
    x: float
    y: float
    theta: float
    v: float
    omega: float
    rate_bps: float
    clearance_m: float


@dataclass
class EpisodeTrace:
    variant: str
    seed: int
    rows: list[TraceRow]
    final_state: RobotState
    reached_goal: bool
    edge_center: tuple[float, float]

    CSV_COLUMNS = ("t", "x", "y", "theta", "v", "omega", "rate_bps", "clearance_m", "variant", "seed")

    @property
    def mean_rate(self) -> float:
        """Time-averaged realized rate (bits/s) over the executed ticks."""
        return float(np.mean([r.rate_bps for r in self.rows])) if self.rows else math.nan

    @property
    def min_clearance(self) -> float:
        return min((r.clearance_m for r in self.rows), default=math.inf)

    def positions(self) -> np.ndarray:
        pts = [(r.x, r.y) for r in self.rows] + [self.final_state.position]
        return np.asarray(pts)

    @property
    def min_edge_distance(self) -> float:
        return float(np.min(np.hypot(*(self.positions() - np.asarray(self.edge_center)).T)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            for r in self.rows:
                w.writerow([fmt(r.t), fmt(r.x), fmt(r.y), fmt(r.theta), fmt(r.v), fmt(r.omega),
                            fmt(r.rate_bps), fmt(r.clearance_m), self.variant, self.seed])


def fmt(x: float) -> str:
    """Fixed-precision scientific rendering used in every emitted CSV."""
    return f"{x:.11e}"


def _stop_in_place(state: RobotState, world: World, cfg: RepConfig, t: float) -> ControlInput:
    nxt = step_dynamics(state, ControlInput(0.0, 0.0), cfg.dt)
    if clearance(nxt, world, t + cfg.dt) < cfg.safety_distance:
        raise NoFeasiblePlan("no feasible rollout and stopping in place is unsafe")
    return ControlInput(0.0, 0.0)


def _drive(task: RepTask, cfg: RepConfig, seed: int):
    """Closed-loop drive; returns [(t, state, control, clearance)], final state, reached."""
    plan_env = task.planning_env()
    goal = np.asarray(cfg.goal)
    state, t = task.start, 0.0
    log = []
    warm = None
    n_ticks = int(round(task.time_limit / cfg.dt))
    reached = math.hypot(state.x - goal[0], state.y - goal[1]) <= cfg.goal_tolerance
    tick = 0
    while not reached and tick < n_ticks:
        rng = np.random.default_rng([seed, tick])
        try:
            res = plan(state, task.world, cfg, plan_env, t, warm_start=warm, rng=rng, cost_to_go=task.cost_to_go)
            u = res.controls[0]
            warm = np.vstack([res.mean_controls[1:], res.mean_controls[-1:]])
        except NoFeasiblePlan:
            u = _stop_in_place(state, task.world, cfg, t)
            warm = None
        log.append((t, state, u, clearance(state, task.world, t)))
        state = step_dynamics(state, u, cfg.dt, exact_arc=cfg.exact_arc)
        tick += 1
        t = tick * cfg.dt
        reached = math.hypot(state.x - goal[0], state.y - goal[1]) <= cfg.goal_tolerance
    return log, state, bool(reached)


def _trace(task: RepTask, variant: str, seed: int, drive) -> EpisodeTrace:
    log, final, reached = drive
    env = task.evaluation_env(variant)
    rows = []
    for tick, (t, s, u, c) in enumerate(log):
        r = realized_rate(s.position, env, nlos_seed=(seed * 1_000_003 + tick) % 2**32)
        rows.append(TraceRow(t, s.x, s.y, s.heading, u.v, u.omega, r, c))
    return EpisodeTrace(variant, seed, rows, final, reached, task.nfc_geom.center)


def run_episode(task: RepTask, variant: str, seed: int = 0) -> EpisodeTrace:
    """Closed-loop receding-horizon run of one planner variant.

    Every variant except REP plans with ``radio_weight = 0``; the variant only
    changes how the edge forms its beam, and the delivered rate is always
    evaluated on the true near-field channel.
    """
    return run_variants(task, [variant], seed)[variant]


def run_variants(task: RepTask, variants: Sequence[str] = VARIANTS, seed: int = 0) -> dict[str, EpisodeTrace]:
    """Run several variants for one seed.

    The three baselines plan identically (no radio term, same seed), so their
    trajectory is driven once and only the realized rates differ.
    """
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    out = {}
    baseline = None
    for v in variants:
        if v == "REP":
            out[v] = _trace(task, v, seed, _drive(task, task.cfg, seed))
        else:
            if baseline is None:
                baseline = _drive(task, replace(task.cfg, radio_weight=0.0), seed)
            out[v] = _trace(task, v, seed, baseline)
    return out
