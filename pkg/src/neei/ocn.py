"""Opportunistic robot-edge collaboration for a small fleet.

Each robot follows its target path with a pure-pursuit tracker that halts
rather than break the safety distance. A robot that stops making progress
asks whether the edge planner would do better; it engages the edge only if
the predicted gain is worth it and its uplink clears the SINR gate.

Energy bookkeeping differs by variant:

* ``OCN`` pays ``message_energy + uplink_power * stuck_window`` for every
  engagement window it opens or renews.
* ``NFC-always`` / ``FFC-always`` exchange a message every tick while the
  robot is active, paying ``message_energy`` plus the power-controlled uplink
  power that meets the SINR target with every active robot interfering,
  held for one tick. FFC combines with the planar model on the small array.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import NoFeasiblePlan
from .geomworld import (
    ControlInput,
    CostToGo,
    Polyline,
    RobotState,
    World,
    clearance,
    path_waypoint_tracker,
    step_dynamics,
)
from .nfchan import (
    ArrayGeometry,
    PathlossModel,
    dbm_to_watt,
    db_to_linear,
    linear_to_db,
    los_channel_near,
    mrt_beam,
    planar_beam,
)
from .rep import RepConfig, fmt, plan

VARIANTS = ("OCN", "NFC-always", "FFC-always")
REASONS = ("no-gain", "sinr-blocked", "engaged", "blocked-environment")
LOCAL, COLLABORATING, DONE = "local", "collaborating", "done"


@dataclass(frozen=True)
class OcnConfig:
    sinr_gate_db: float = 20.0
    gain_threshold: float = 0.15
    uplink_power: float = 0.1
    max_uplink_power: float = 1.0
    message_energy: float = 0.1
    edge_center: tuple[float, float] = (0.0, 0.0)
    noise_dbm: float = -100.0
    stuck_window: float = 1.0
    progress_eps: float = 0.05
    lookahead: float = 0.6
    goal_tolerance: float = 0.2
    stop_distance: float = 0.5
    field_inflation: float = 0.25
    field_margin: float = 3.0
    edge_slots: int = 2

    def __post_init__(self):
        if not math.isfinite(self.sinr_gate_db):
            raise ValueError("sinr_gate_db must be finite")
        for name in ("gain_threshold", "uplink_power", "message_energy", "stuck_window",
                     "progress_eps", "lookahead", "goal_tolerance", "stop_distance", "field_inflation",
                     "field_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_uplink_power < self.uplink_power:
            raise ValueError("max_uplink_power must be >= uplink_power")
        if self.edge_slots < 1:
            raise ValueError("edge_slots must be >= 1")

    @property
    def noise_power(self) -> float:
        return dbm_to_watt(self.noise_dbm)


@dataclass
class RobotAgent:
    id: int
    state: RobotState
    target_path: Polyline
    stuck_window: float = 1.0
    progress_eps: float = 0.05
    comm_energy: float = 0.0
    status: str = LOCAL
    s: float = 0.0
    progress_log: list[tuple[float, float]] = field(default_factory=list, repr=False)
    engaged_until: float = -math.inf
    last_eval: float = -math.inf
    warm: np.ndarray | None = field(default=None, repr=False)
    field_map: CostToGo | None = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.target_path, Polyline):
            self.target_path = Polyline.of(self.target_path)

    @property
    def goal(self) -> tuple[float, float]:
        g = self.target_path.points[-1]
        return (float(g[0]), float(g[1]))

    def add_energy(self, joules: float) -> None:
        if joules < 0:
            raise ValueError("energy increments must be nonnegative")
        self.comm_energy += joules

    def update_progress(self, t: float) -> None:
        self.s = advance(self.target_path, self.state.position, self.s)
        self.progress_log.append((t, self.s))

    def is_stuck(self, t: float) -> bool:
        """Less than ``progress_eps`` of path progress over the last window."""
        if self.status == DONE or not self.progress_log:
            return False
        t0 = t - self.stuck_window
        if self.progress_log[0][0] > t0 + 1e-9:
            return False
        past = next(s for (tk, s) in reversed(self.progress_log) if tk <= t0 + 1e-9)
        return self.s - past < self.progress_eps


@dataclass(frozen=True)
class CollaborationDecision:
    engage: bool
    predicted_gain: float
    sinr_db: float
    reason: str

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown reason {self.reason!r}")


def advance(line: Polyline, position, s: float, back: float = 0.5, ahead: float = 1.5) -> float:
    """Arc-length position on ``line`` near the previous value ``s``."""
    return line.project(position, s_min=max(0.0, s - back), s_max=s + ahead)


def local_control(agent: RobotAgent, world: World, t: float, edge_cfg: RepConfig, cfg: OcnConfig,
                  state: RobotState | None = None, s: float | None = None) -> ControlInput:
    """Pure pursuit with a safety stop.

    Within ``cfg.stop_distance`` of an obstacle the robot refuses any step
    that brings it closer, and it never steps inside d_safe. Halting early
    leaves the edge planner room to steer around.
    """
    state = agent.state if state is None else state
    s = agent.s if s is None else s
    lim = edge_cfg.limits
    u = path_waypoint_tracker(agent.target_path, state, cfg.lookahead, min(edge_cfg.v_ref, lim.v_max),
                              lim.omega_max, cfg.goal_tolerance, s_hint=max(0.0, s - 0.5))
    nxt = step_dynamics(state, u, edge_cfg.dt, exact_arc=edge_cfg.exact_arc)
    c_next = clearance(nxt, world, t + edge_cfg.dt)
    if c_next < edge_cfg.safety_distance:
        return ControlInput(0.0, 0.0)
    if c_next < cfg.stop_distance and c_next < clearance(state, world, t + edge_cfg.dt):
        return ControlInput(0.0, 0.0)
    return u


def local_rollout_progress(agent: RobotAgent, world: World, t: float, edge_cfg: RepConfig,
                           cfg: OcnConfig) -> float:
    state, s = agent.state, agent.s
    for k in range(edge_cfg.horizon):
        u = local_control(agent, world, t + k * edge_cfg.dt, edge_cfg, cfg, state, s)
        state = step_dynamics(state, u, edge_cfg.dt, exact_arc=edge_cfg.exact_arc)
        s = advance(agent.target_path, state.position, s)
    return s - agent.s


def edge_plan(agent: RobotAgent, world: World, t: float, edge_cfg: RepConfig,
              cost_to_go: CostToGo | None = None, rng=None):
    cfg = replace(edge_cfg, goal=agent.goal, radio_weight=0.0)
    return plan(agent.state, world, cfg, None, t, warm_start=agent.warm, rng=rng, cost_to_go=cost_to_go)


def collaboration_gain(agent: RobotAgent, world: World, t: float, edge_cfg: RepConfig,
                       cfg: OcnConfig | None = None, cost_to_go: CostToGo | None = None,
                       rng=None) -> tuple[float, bool]:
    """Path progress of the edge plan minus that of the local rollout, over H steps.

    Returns ``(gain, feasible)``; an infeasible edge plan gives ``(0, False)``.
    """
    cfg = cfg or OcnConfig()
    try:
        res = edge_plan(agent, world, t, edge_cfg, cost_to_go, rng)
    except NoFeasiblePlan:
        return 0.0, False
    s = agent.s
    for st in res.states[1:]:
        s = advance(agent.target_path, st.position, s)
    return (s - agent.s) - local_rollout_progress(agent, world, t, edge_cfg, cfg), True


# ---------------------------------------------------------------------------
# uplink


@dataclass(frozen=True)
class Uplink:
    """Edge receiver: array, pathloss and combiner model (``near`` or ``planar``)."""

    geom: ArrayGeometry
    pl: PathlossModel
    combiner: str = "near"

    def channels(self, positions) -> list:
        return [los_channel_near(self.geom, p, self.pl) for p in positions]

    def gains(self, positions) -> np.ndarray:
        """Matrix G[i, j] = |h_j^H w_i|^2 with w_i the combiner for robot i."""
        hs = self.channels(positions)
        ws = [mrt_beam(h) if self.combiner == "near" else planar_beam(self.geom, p, self.pl)
              for h, p in zip(hs, positions)]
        H = np.array([h.gains for h in hs])
        W = np.array([w.weights for w in ws])
        return np.abs(W @ H.T) ** 2


def uplink_sinr_db(uplink: Uplink, position, power: float, interferers: Sequence[tuple[tuple, float]],
                   noise: float) -> float:
    """SINR of one robot at the edge, other transmitting robots interfering."""
    pts = [tuple(position)] + [tuple(p) for p, _ in interferers]
    G = uplink.gains(pts)
    interf = sum(pw * G[0, j + 1] for j, (_, pw) in enumerate(interferers))
    return linear_to_db(power * G[0, 0] / (noise + interf))


def power_control(uplink: Uplink, positions, target_db: float, noise: float, p_max: float) -> np.ndarray:
    """Smallest powers giving every robot SINR >= target with all interfering.

    Solves (diag(g) - gamma * C) p = gamma * noise; when that has no positive
    solution the target is unreachable and every robot transmits at p_max.
    """
    if len(positions) == 0:
        return np.zeros(0)
    G = uplink.gains(positions)
    gamma = db_to_linear(target_db)
    C = G.copy()
    np.fill_diagonal(C, 0.0)
    A = np.diag(np.diag(G)) - gamma * C
    try:
        p = np.linalg.solve(A, np.full(len(positions), gamma * noise))
    except np.linalg.LinAlgError:
        return np.full(len(positions), p_max)
    if not np.all(np.isfinite(p)) or np.any(p <= 0) or np.any(p > p_max):
        return np.full(len(positions), p_max)
    return p


# ---------------------------------------------------------------------------
# fleet simulation


@dataclass(frozen=True)
class RobotSpec:
    id: int
    path: tuple[tuple[float, float], ...]
    start_heading: float | None = None


@dataclass(frozen=True)
class OcnTask:
    world: World
    robots: tuple[RobotSpec, ...]
    cfg: OcnConfig
    edge_cfg: RepConfig
    nfc_geom: ArrayGeometry
    ffc_geom: ArrayGeometry
    pl: PathlossModel
    time_limit: float = 60.0
    grid_resolution: float = 0.1

    def region(self, agent: RobotAgent) -> tuple[float, float, float, float]:
        """Grid extent for a robot's map: its path's bounding box plus a margin."""
        pts = agent.target_path.points
        m = self.cfg.field_margin
        box = (pts[:, 0].min() - m, pts[:, 1].min() - m, pts[:, 0].max() + m, pts[:, 1].max() + m)
        if self.world.bounds is not None:
            wb = self.world.bounds
            box = (max(box[0], wb[0]), max(box[1], wb[1]), min(box[2], wb[2]), min(box[3], wb[3]))
        return tuple(float(v) for v in box)

    def field_at(self, agent: RobotAgent, t: float) -> CostToGo:
        """Cost-to-go to the robot's goal over the world as it stands at ``t``.

        Obstacles are inflated by ``cfg.field_inflation`` so that gaps too
        narrow for the footprint read as closed. Fields are cached per robot
        and per grid-quantized dynamic obstacle offset.
        """
        res = self.grid_resolution
        offs = tuple(
            tuple(int(round(v * max(0.0, t - d.active_from) / res)) for v in d.velocity)
            for d in self.world.dynamic)
        cache = self.__dict__.setdefault("_fields", {})
        key = (agent.id, offs)
        if key not in cache:
            snap = self.world.snapshot(t)
            cache[key] = CostToGo.build(snap, agent.goal, res, self.cfg.field_inflation, self.region(agent))
        return cache[key]

    def agents(self) -> list[RobotAgent]:
        out = []
        for r in self.robots:
            pts = np.asarray(r.path, dtype=float)
            heading = r.start_heading
            if heading is None:
                d = pts[1] - pts[0] if len(pts) > 1 else np.array([1.0, 0.0])
                heading = math.atan2(d[1], d[0])
            st = RobotState((float(pts[0, 0]), float(pts[0, 1])), heading)
            out.append(RobotAgent(r.id, st, Polyline.of(pts), self.cfg.stuck_window, self.cfg.progress_eps))
        return out


@dataclass(frozen=True)
class FleetRow:
    t: float
    robot_id: int
    x: float
    y: float
    status: str
    engaged: bool
    sinr_db: float
    gain_m: float
    energy_j: float
    clearance_m: float


@dataclass(frozen=True)
class Event:
    t: float
    robot_id: int
    reason: str


@dataclass
class FleetTrace:
    variant: str
    seed: int
    rows: list[FleetRow]
    events: list[Event]
    agents: list[RobotAgent]
    engagements: dict[int, list[float]]
    finish_times: dict[int, float]

    TRACE_COLUMNS = ("t", "robot_id", "x", "y", "status", "engaged", "sinr_db", "gain_m", "energy_j")
    EVENT_COLUMNS = ("t", "robot_id", "reason")

    def engagement_counts(self) -> dict[int, int]:
        return {a.id: len(self.engagements.get(a.id, [])) for a in self.agents}

    def energy(self) -> dict[int, float]:
        return {a.id: a.comm_energy for a in self.agents}

    @property
    def fleet_energy(self) -> float:
        return float(sum(a.comm_energy for a in self.agents))

    @property
    def all_done(self) -> bool:
        return all(a.status == DONE for a in self.agents)

    @property
    def min_clearance(self) -> float:
        return min((r.clearance_m for r in self.rows), default=math.inf)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([fmt(r.t), r.robot_id, fmt(r.x), fmt(r.y), r.status, int(r.engaged),
                            fmt(r.sinr_db), fmt(r.gain_m), fmt(r.energy_j)])

    def write_events(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.EVENT_COLUMNS)
            for e in self.events:
                w.writerow([fmt(e.t), e.robot_id, e.reason])


def decide(agent: RobotAgent, world: World, t: float, cfg: OcnConfig, edge_cfg: RepConfig,
           uplink: Uplink, interferers: Sequence[tuple[tuple, float]] = (),
           cost_to_go: CostToGo | None = None, rng=None, force: bool = False) -> CollaborationDecision:
    """Gate one robot's request for edge collaboration.

    Only a stuck robot (or one whose engagement is up for renewal, ``force``)
    is evaluated. ``cost_to_go`` is the edge's current map of the robot's
    surroundings; when it shows the goal unreachable from the robot, or the
    edge planner finds no safe rollout, the reason is ``blocked-environment``.
    """
    sinr_db = uplink_sinr_db(uplink, agent.state.position, cfg.uplink_power, interferers, cfg.noise_power)
    if not (force or agent.is_stuck(t)):
        return CollaborationDecision(False, 0.0, sinr_db, "no-gain")
    if cost_to_go is not None and not np.isfinite(cost_to_go.lookup(agent.state.position)[0]):
        return CollaborationDecision(False, 0.0, sinr_db, "blocked-environment")
    gain, feasible = collaboration_gain(agent, world, t, edge_cfg, cfg, cost_to_go, rng)
    if not feasible:
        return CollaborationDecision(False, 0.0, sinr_db, "blocked-environment")
    if gain < cfg.gain_threshold:
        return CollaborationDecision(False, gain, sinr_db, "no-gain")
    if sinr_db < cfg.sinr_gate_db:
        return CollaborationDecision(False, gain, sinr_db, "sinr-blocked")
    return CollaborationDecision(True, gain, sinr_db, "engaged")


def run_ocn(task: OcnTask, variant: str = "OCN", seed: int = 0) -> FleetTrace:
    """Synchronous lockstep fleet simulation.

    Every tick each active robot either tracks its path locally or, while
    engaged, applies the first control of a fresh edge plan. New engagements
    are granted at most one per tick, largest predicted gain first, and never
    beyond ``edge_slots`` concurrently. In the always-on variants a stuck
    robot is handed to the edge without gating.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    cfg, ecfg, world = task.cfg, task.edge_cfg, task.world
    dt = ecfg.dt
    nfc = Uplink(task.nfc_geom, task.pl, "near")
    ffc = Uplink(task.ffc_geom, task.pl, "planar")
    agents = task.agents()
    rows: list[FleetRow] = []
    events: list[Event] = []
    engagements: dict[int, list[float]] = {a.id: [] for a in agents}
    finish: dict[int, float] = {}
    last_gain = {a.id: math.nan for a in agents}
    last_reason: dict[int, str | None] = {a.id: None for a in agents}
    n_ticks = int(round(task.time_limit / dt))
    window_ticks = max(1, int(round(cfg.stuck_window / dt)))

    def done(a: RobotAgent) -> bool:
        return math.dist(a.state.position, a.goal) <= cfg.goal_tolerance

    for a in agents:
        a.update_progress(0.0)
        if done(a):
            a.status = DONE
            finish[a.id] = 0.0

    for tick in range(n_ticks + 1):
        t = tick * dt
        active = [a for a in agents if a.status != DONE]
        rng_for = lambda a, tag: np.random.default_rng([seed, tick, a.id, tag])  # noqa: E731

        # release engagements whose window expired unless renewal passes the gates
        for a in active:
            if a.status == COLLABORATING and t >= a.engaged_until - 1e-9:
                others = [(b.state.position, cfg.uplink_power) for b in active
                          if b is not a and b.status == COLLABORATING]
                if variant == "OCN":
                    a.field_map = task.field_at(a, t)
                    d = decide(a, world, t, cfg, ecfg, nfc, others, a.field_map, rng_for(a, 0), force=True)
                    last_gain[a.id] = d.predicted_gain
                    if d.engage:
                        a.engaged_until = t + cfg.stuck_window
                        a.add_energy(cfg.message_energy + cfg.uplink_power * cfg.stuck_window)
                        continue
                    events.append(Event(t, a.id, d.reason))
                    last_reason[a.id] = d.reason
                elif a.is_stuck(t):
                    a.field_map = task.field_at(a, t)
                    a.engaged_until = t + cfg.stuck_window
                    continue
                a.status = LOCAL
                a.warm = None

        # upper level: at most one new engagement per tick, bounded slots
        busy = sum(a.status == COLLABORATING for a in active)
        candidates = []
        for a in active:
            if a.status != LOCAL or not a.is_stuck(t):
                continue
            if variant == "OCN":
                if t - a.last_eval < cfg.stuck_window - 1e-9:
                    continue
                a.last_eval = t
                others = [(b.state.position, cfg.uplink_power) for b in active
                          if b is not a and b.status == COLLABORATING]
                a.field_map = task.field_at(a, t)
                d = decide(a, world, t, cfg, ecfg, nfc, others, a.field_map, rng_for(a, 1))
                last_gain[a.id] = d.predicted_gain
                if d.engage:
                    candidates.append((-d.predicted_gain, a.id, a, d))
                elif d.reason != last_reason[a.id]:
                    events.append(Event(t, a.id, d.reason))
                    last_reason[a.id] = d.reason
            else:
                a.field_map = task.field_at(a, t)
                candidates.append((0.0, a.id, a, None))
        candidates.sort(key=lambda c: (c[0], c[1]))
        if candidates and busy < cfg.edge_slots:
            _, _, a, d = candidates[0]
            a.status = COLLABORATING
            a.engaged_until = t + cfg.stuck_window
            engagements[a.id].append(t)
            events.append(Event(t, a.id, "engaged"))
            last_reason[a.id] = "engaged"
            if variant == "OCN":
                a.add_energy(cfg.message_energy + cfg.uplink_power * cfg.stuck_window)

        # per-tick message exchange of the always-on variants
        sinr_now = {}
        tx = [b for b in active if b.status == COLLABORATING]
        for a in active:
            others = [(b.state.position, cfg.uplink_power) for b in tx if b is not a]
            sinr_now[a.id] = uplink_sinr_db(nfc, a.state.position, cfg.uplink_power, others, cfg.noise_power)
        if variant != "OCN" and active:
            link = nfc if variant == "NFC-always" else ffc
            p = power_control(link, [a.state.position for a in active], cfg.sinr_gate_db,
                              cfg.noise_power, cfg.max_uplink_power)
            for a, pk in zip(active, p):
                a.add_energy(cfg.message_energy + float(pk) * dt)

        for a in agents:
            rows.append(FleetRow(t, a.id, a.state.x, a.state.y, a.status, a.status == COLLABORATING,
                                 sinr_now.get(a.id, math.nan), last_gain[a.id], a.comm_energy,
                                 clearance(a.state, world, t)))
        if tick == n_ticks or not active:
            break

        # lockstep motion update from this tick's snapshot
        controls = {}
        for a in active:
            if a.status == COLLABORATING:
                try:
                    res = edge_plan(a, world, t, ecfg, a.field_map, rng_for(a, 2))
                    controls[a.id] = res.controls[0]
                    a.warm = np.vstack([res.mean_controls[1:], res.mean_controls[-1:]])
                except NoFeasiblePlan:
                    controls[a.id] = local_control(a, world, t, ecfg, cfg)
                    a.warm = None
            else:
                controls[a.id] = local_control(a, world, t, ecfg, cfg)
        for a in active:
            a.state = step_dynamics(a.state, controls[a.id], dt, exact_arc=ecfg.exact_arc)
            a.update_progress(t + dt)
            if done(a):
                a.status = DONE
                finish[a.id] = t + dt
    return FleetTrace(variant, seed, rows, events, agents, engagements, finish)
