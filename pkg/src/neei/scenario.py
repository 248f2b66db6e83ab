"""Declarative experiment description: YAML in, validated task objects out.

A scenario file has a versioned schema. Keys that carry physical quantities
name their unit (``noise_dbm``, ``bandwidth_hz``, ``center_m``), unknown keys
are rejected, and every module-level invariant is checked at parse time by
building the corresponding domain object.
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import ocn, rep, vbf
from .errors import ParseError, ValidationError
from .geomworld import ControlLimits, ConvexPolygon, DynamicObstacle, RobotState, World
from .nfchan import ArrayGeometry, LinkBudget, NlosParams, PathlossModel, db_to_linear, dbm_to_watt

SCHEMA_VERSION = 1

Point = tuple[float, float]

# pydantic error types that mean "the value is well-formed but breaks a rule"
_INVARIANT_ERRORS = {
    "value_error", "assertion_error", "greater_than", "greater_than_equal", "less_than",
    "less_than_equal", "too_short", "too_long",
}


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# radio


class ArraySpec(_Spec):
    num_elements: int = Field(ge=1)
    carrier_freq_hz: float = Field(gt=0)
    element_spacing_m: Optional[float] = Field(default=None, gt=0)
    center_m: Point = (0.0, 0.0)
    axis_deg: float = 90.0

    def build(self) -> ArrayGeometry:
        a = math.radians(self.axis_deg)
        return ArrayGeometry(self.num_elements, self.carrier_freq_hz, self.element_spacing_m,
                             self.center_m, (math.cos(a), math.sin(a)))

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self


class ArraysSpec(_Spec):
    nfc: ArraySpec
    ffc: ArraySpec


class PathlossSpec(_Spec):
    reference_loss_db: float = -62.0
    exponent: float = Field(default=2.0, ge=0)

    def build(self) -> PathlossModel:
        return PathlossModel(db_to_linear(self.reference_loss_db), self.exponent)


class LinkSpec(_Spec):
    tx_power_dbm: float = 20.0
    noise_dbm: float = -80.0
    bandwidth_hz: float = Field(gt=0)

    def build(self) -> LinkBudget:
        return LinkBudget.from_dbm(self.tx_power_dbm, self.noise_dbm, self.bandwidth_hz)


class NlosSpec(_Spec):
    """``rician_k`` absent means line of sight only."""

    rician_k: Optional[float] = Field(default=None, ge=0)
    mean_re: float = 0.0
    mean_im: float = 0.0
    std: float = Field(default=1.0, ge=0)

    def build(self) -> NlosParams:
        k = math.inf if self.rician_k is None else self.rician_k
        return NlosParams(k, complex(self.mean_re, self.mean_im), self.std)

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self


class RadioSpec(_Spec):
    arrays: ArraysSpec
    pathloss: PathlossSpec = PathlossSpec()
    link: LinkSpec
    nlos: NlosSpec = NlosSpec()
    common_distance: bool = False


# ---------------------------------------------------------------------------
# world


class PolygonSpec(_Spec):
    """Either explicit counter-clockwise vertices or an axis-aligned box."""

    vertices_m: Optional[list[Point]] = None
    box_m: Optional[tuple[float, float, float, float]] = None

    def build(self) -> ConvexPolygon:
        if self.box_m is not None:
            return ConvexPolygon.from_bounds(*self.box_m)
        return ConvexPolygon(self.vertices_m)

    @model_validator(mode="after")
    def _check(self):
        if (self.vertices_m is None) == (self.box_m is None):
            raise ValueError("give exactly one of vertices_m or box_m")
        if self.box_m is not None:
            x0, y0, x1, y1 = self.box_m
            if not (x1 > x0 and y1 > y0):
                raise ValueError("box_m must be (xmin, ymin, xmax, ymax) with positive extent")
        self.build()
        return self


class DynamicSpec(PolygonSpec):
    velocity_mps: Point = (0.0, 0.0)
    active_from_s: float = 0.0

    def build_dynamic(self) -> DynamicObstacle:
        return DynamicObstacle(self.build(), self.velocity_mps, self.active_from_s)


class WorldSpec(_Spec):
    bounds_m: Optional[tuple[float, float, float, float]] = None
    obstacles: list[PolygonSpec] = []
    dynamic: list[DynamicSpec] = []

    @field_validator("bounds_m")
    @classmethod
    def _bounds(cls, b):
        if b is not None and not (b[2] > b[0] and b[3] > b[1]):
            raise ValueError("bounds_m must be (xmin, ymin, xmax, ymax) with positive extent")
        return b

    def build(self) -> World:
        return World(tuple(o.build() for o in self.obstacles),
                     tuple(d.build_dynamic() for d in self.dynamic), self.bounds_m)


# ---------------------------------------------------------------------------
# tasks


class PlannerSpec(_Spec):
    horizon: int = 20
    dt_s: float = 0.1
    safety_distance_m: float = 0.1
    goal_tolerance_m: float = 0.2
    radio_weight: float = 0.0
    progress_weight: float = 1.0
    effort_weight: float = 0.01
    v_ref_mps: float = 0.5
    v_max_mps: float = 0.5
    omega_max_radps: float = 1.5
    candidate_count: int = 256
    elite_frac: float = 0.1
    iterations: int = 4
    init_std: Point = (0.25, 0.8)
    min_std: Point = (0.02, 0.05)
    noise_correlation: float = 0.0
    exact_arc: bool = True

    def build(self, goal: Point = (0.0, 0.0)) -> rep.RepConfig:
        return rep.RepConfig(
            horizon=self.horizon, dt=self.dt_s, safety_distance=self.safety_distance_m, goal=tuple(goal),
            goal_tolerance=self.goal_tolerance_m, radio_weight=self.radio_weight,
            progress_weight=self.progress_weight, effort_weight=self.effort_weight, v_ref=self.v_ref_mps,
            candidate_count=self.candidate_count, elite_frac=self.elite_frac, iterations=self.iterations,
            limits=ControlLimits(self.v_max_mps, self.omega_max_radps), init_std=self.init_std,
            min_std=self.min_std, exact_arc=self.exact_arc, noise_correlation=self.noise_correlation)

    @model_validator(mode="after")
    def _check(self):
        if not (self.v_max_mps > 0 and self.omega_max_radps > 0):
            raise ValueError("v_max_mps and omega_max_radps must be positive")
        self.build()
        return self


def _known(names, allowed, what):
    bad = [n for n in names if n not in allowed]
    if bad:
        raise ValueError(f"unknown {what} {bad}; expected a subset of {list(allowed)}")
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate {what}")
    if not names:
        raise ValueError(f"at least one {what[:-1]} is required")
    return names


class RepTaskSpec(_Spec):
    kind: Literal["rep"]
    start_m: Point
    start_heading_rad: float = 0.0
    goal_m: Point
    planner: PlannerSpec = PlannerSpec()
    grid_resolution_m: float = Field(default=0.1, gt=0)
    variants: list[str] = list(rep.VARIANTS)

    @field_validator("variants")
    @classmethod
    def _variants(cls, names):
        return _known(names, rep.VARIANTS, "variants")


class HeatmapSpec(_Spec):
    pose_m: Point
    region_m: tuple[float, float, float, float]
    resolution_m: float = Field(gt=0)
    normalize: bool = False

    @field_validator("region_m")
    @classmethod
    def _region(cls, r):
        if not (r[2] > r[0] and r[3] > r[1]):
            raise ValueError("region_m must be (xmin, ymin, xmax, ymax) with positive extent")
        return r


class VbfTaskSpec(_Spec):
    kind: Literal["vbf"]
    capture_path_m: list[Point] = Field(min_length=2)
    capture_count: int = Field(ge=1)
    training_path_m: list[Point] = Field(min_length=2)
    training_count: int = Field(ge=1)
    training_jitter: float = Field(default=0.0, ge=0)
    length_scale_m: float = Field(gt=0)
    angle_scale_rad: float = Field(gt=0)
    payload_bits: float = Field(default=vbf.DEFAULT_PAYLOAD_BITS, gt=0)
    slot_duration_s: float = Field(default=1.0, gt=0)
    budget_mode: Literal["total", "per-frame"] = "total"
    power_budgets_w: list[float] = Field(min_length=1)
    baselines: list[str] = list(vbf.BASELINES)
    heatmap: Optional[HeatmapSpec] = None

    @field_validator("baselines")
    @classmethod
    def _baselines(cls, names):
        return _known(names, vbf.BASELINES, "baselines")

    @field_validator("power_budgets_w")
    @classmethod
    def _budgets(cls, b):
        if any(not (x >= 0 and math.isfinite(x)) for x in b):
            raise ValueError("power budgets must be finite and >= 0")
        return b


class CollaborationSpec(_Spec):
    sinr_gate_db: float = 20.0
    gain_threshold_m: float = 0.15
    max_uplink_power_w: float = 1.0
    message_energy_j: float = 0.1
    stuck_window_s: float = 1.0
    progress_eps_m: float = 0.05
    lookahead_m: float = 0.6
    goal_tolerance_m: float = 0.2
    stop_distance_m: float = 0.5
    field_inflation_m: float = 0.25
    field_margin_m: float = 3.0
    edge_slots: int = 2


class RobotModel(_Spec):
    id: int
    path_m: list[Point] = Field(min_length=2)
    start_heading_rad: Optional[float] = None


class OcnTaskSpec(_Spec):
    kind: Literal["ocn"]
    robots: list[RobotModel] = Field(min_length=1)
    collaboration: CollaborationSpec = CollaborationSpec()
    edge_planner: PlannerSpec = PlannerSpec()
    grid_resolution_m: float = Field(default=0.1, gt=0)
    variants: list[str] = list(ocn.VARIANTS)

    @field_validator("variants")
    @classmethod
    def _variants(cls, names):
        return _known(names, ocn.VARIANTS, "variants")

    @field_validator("robots")
    @classmethod
    def _ids(cls, robots):
        ids = [r.id for r in robots]
        if len(set(ids)) != len(ids):
            raise ValueError("robot ids must be unique")
        return robots


TaskSpec = Annotated[Union[RepTaskSpec, VbfTaskSpec, OcnTaskSpec], Field(discriminator="kind")]


# ---------------------------------------------------------------------------
# scenario


class Scenario(_Spec):
    version: Literal[1] = SCHEMA_VERSION
    name: str = Field(min_length=1)
    seeds: list[int] = Field(min_length=1)
    time_limit_s: float = Field(default=60.0, gt=0)
    radio: RadioSpec
    world: WorldSpec = WorldSpec()
    task: TaskSpec

    @model_validator(mode="after")
    def _check(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be >= 0")
        self._build_domain()
        return self

    @property
    def kind(self) -> str:
        return self.task.kind

    @property
    def variants(self) -> list[str]:
        t = self.task
        return list(t.baselines if isinstance(t, VbfTaskSpec) else t.variants)

    def nfc_geom(self) -> ArrayGeometry:
        return self.radio.arrays.nfc.build()

    def ffc_geom(self) -> ArrayGeometry:
        return self.radio.arrays.ffc.build()

    def world_model(self) -> World:
        return self.world.build()

    # domain builders -------------------------------------------------------

    def rep_task(self) -> rep.RepTask:
        t = self._expect(RepTaskSpec)
        r = self.radio
        return rep.RepTask(
            self.world_model(), RobotState(t.start_m, t.start_heading_rad), t.planner.build(t.goal_m),
            self.nfc_geom(), self.ffc_geom(), r.pathloss.build(), r.link.build(), r.nlos.build(),
            self.time_limit_s, r.common_distance, t.grid_resolution_m)

    def vbf_frames(self, seed: int) -> list[vbf.Frame]:
        """Candidate frames along the capture path, scored against a jittered training sweep."""
        t = self._expect(VbfTaskSpec)
        capture = vbf.poses_along(t.capture_path_m, t.capture_count)
        training = vbf.poses_along(t.training_path_m, t.training_count, t.training_jitter,
                                   np.random.default_rng(seed))
        return vbf.frames_from_poses(capture, training, t.length_scale_m, t.angle_scale_rad,
                                     t.payload_bits, t.slot_duration_s)

    def ocn_task(self) -> ocn.OcnTask:
        t = self._expect(OcnTaskSpec)
        c, link = t.collaboration, self.radio.link
        cfg = ocn.OcnConfig(
            sinr_gate_db=c.sinr_gate_db, gain_threshold=c.gain_threshold_m,
            uplink_power=dbm_to_watt(link.tx_power_dbm), max_uplink_power=c.max_uplink_power_w,
            message_energy=c.message_energy_j, edge_center=self.radio.arrays.nfc.center_m,
            noise_dbm=link.noise_dbm, stuck_window=c.stuck_window_s, progress_eps=c.progress_eps_m,
            lookahead=c.lookahead_m, goal_tolerance=c.goal_tolerance_m, stop_distance=c.stop_distance_m,
            field_inflation=c.field_inflation_m, field_margin=c.field_margin_m, edge_slots=c.edge_slots)
        robots = tuple(ocn.RobotSpec(r.id, tuple(r.path_m), r.start_heading_rad) for r in t.robots)
        return ocn.OcnTask(self.world_model(), robots, cfg, t.edge_planner.build(), self.nfc_geom(),
                           self.ffc_geom(), self.radio.pathloss.build(), self.time_limit_s,
                           t.grid_resolution_m)

    def _expect(self, spec_type):
        if not isinstance(self.task, spec_type):
            raise TypeError(f"scenario {self.name!r} is a {self.task.kind} task")
        return self.task

    def _build_domain(self):
        if isinstance(self.task, RepTaskSpec):
            self.rep_task()
        elif isinstance(self.task, OcnTaskSpec):
            self.ocn_task()
        else:
            self.vbf_frames(self.seeds[0])

    # serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        """Plain data with every default filled in (absent optionals omitted)."""
        return self.model_dump(mode="json", exclude_none=True)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False, default_flow_style=None, width=100)


def write_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(scenario), encoding="utf-8")


def loads_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario text.

    Raises ParseError for malformed YAML or a structurally wrong document
    (unknown or missing keys, wrong types) and ValidationError when a value
    breaks a domain invariant. Both carry the 1-based line when it is known.
    """
    if not text.strip():
        raise ParseError(f"{source}: scenario file is empty", line=1)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError(f"{source}: {getattr(exc, 'problem', None) or exc}", line=line) from None
    if not isinstance(data, dict):
        raise ParseError(f"{source}: top level must be a mapping", line=1)
    try:
        return Scenario.model_validate(data)
    except pydantic.ValidationError as exc:
        raise _translate(exc, text, source) from None


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file") from None
    return loads_scenario(text, str(path))


def _translate(exc: pydantic.ValidationError, text: str, source: str):
    errors = exc.errors(include_url=False)
    first = errors[0]
    loc = list(first["loc"])
    if loc[:1] == ["task"] and len(loc) > 1 and loc[1] in ("rep", "vbf", "ocn"):
        del loc[1]  # discriminator tag, not a key in the file
    field = ".".join(str(p) for p in loc)
    line = _line_of(text, loc)
    msg = first["msg"].removeprefix("Value error, ")
    more = f" (+{len(errors) - 1} more)" if len(errors) > 1 else ""
    if first["type"] in _INVARIANT_ERRORS:
        err = ValidationError(f"{msg}{more}", field=field or None, line=line)
    else:
        err = ParseError(f"{source}: {msg}{more}", line=line, field=field or None)
    return err


def _line_of(text: str, loc) -> int | None:
    """1-based line of the deepest YAML node reachable along ``loc``."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = node.start_mark.line + 1 if node is not None else None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            hit = next(((k, v) for k, v in node.value if k.value == str(part)), None)
            if hit is None:
                continue
            node = hit[1]
            line = hit[0].start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
    return line


def shipped_scenarios() -> dict[str, Path]:
    """Scenario files bundled with the package, by name."""
    root = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}


def resolve_scenario(name_or_path) -> Path:
    """A path as given, or the bundled scenario of that name."""
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = shipped_scenarios()
    if str(name_or_path) in shipped:
        return shipped[str(name_or_path)]
    raise ParseError(f"{name_or_path}: no such file or shipped scenario (have {sorted(shipped)})")
