import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neei.errors import NoFeasiblePlan
from neei.geomworld import ConvexPolygon, RobotState, World, clearance
from neei.nfchan import ArrayGeometry, LinkBudget, PathlossModel
from neei.rep import ChannelEnv, RepConfig, RepTask, plan, realized_rate, run_variants, step_reward
from neei.scenario import parse_scenario, shipped_scenarios

GEOM = ArrayGeometry(640, 30e9, center=(0.0, 0.0), axis=(1.0, 0.0))
PL = PathlossModel(10 ** -6.2, 2.0)
LINK = LinkBudget.from_dbm(20.0, -80.0, 200e3)
ENV = ChannelEnv(GEOM, PL, LINK)


def cfg(**kw):
    base = dict(horizon=15, dt=0.1, goal=(5.0, 3.0), candidate_count=64, iterations=4, safety_distance=0.1)
    base.update(kw)
    return RepConfig(**base)


def test_config_invariants():
    with pytest.raises(ValueError):
        RepConfig(horizon=0)
    with pytest.raises(ValueError):
        RepConfig(dt=0.0)
    with pytest.raises(ValueError):
        RepConfig(radio_weight=-1.0)
    with pytest.raises(ValueError):
        RepConfig(noise_correlation=1.0)


def test_plan_heads_toward_goal_in_free_space():
    s0 = RobotState((0.0, 3.0), 0.0)
    res = plan(s0, World(), cfg())
    assert res.feasible and len(res.controls) == 15 and len(res.states) == 16
    end = res.states[-1].position
    assert math.hypot(end[0] - 5, end[1] - 3) < 5.0 - 0.4


def test_plan_respects_limits_and_safety():
    wall = ConvexPolygon.from_bounds(1.0, 2.0, 1.3, 4.0)
    w = World([wall])
    c = cfg(safety_distance=0.15)
    res = plan(RobotState((0.0, 3.0), 0.0), w, c)
    for u in res.controls:
        assert 0.0 <= u.v <= c.limits.v_max + 1e-12
        assert abs(u.omega) <= c.limits.omega_max + 1e-12
    assert min(clearance(s, w, k * c.dt) for k, s in enumerate(res.states)) >= 0.15 - 1e-9


def test_iteration_costs_never_increase():
    res = plan(RobotState((0.0, 3.0), 0.0), World(), cfg(iterations=6, radio_weight=1e-6), ENV)
    costs = res.iteration_costs
    assert len(costs) == 6
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_plan_is_deterministic_for_a_seed():
    a = plan(RobotState((0.0, 3.0)), World(), cfg(rng_seed=5), ENV)
    b = plan(RobotState((0.0, 3.0)), World(), cfg(rng_seed=5), ENV)
    assert a.controls == b.controls and a.cost == b.cost


def test_boxed_in_robot_has_no_feasible_plan():
    # four walls within the safety distance of the footprint
    walls = [ConvexPolygon.from_bounds(-0.5, -0.5, 0.5, -0.2), ConvexPolygon.from_bounds(-0.5, 0.2, 0.5, 0.5),
             ConvexPolygon.from_bounds(-0.5, -0.2, -0.2, 0.2), ConvexPolygon.from_bounds(0.2, -0.2, 0.5, 0.2)]
    with pytest.raises(NoFeasiblePlan):
        plan(RobotState((0.0, 0.0)), World(walls), cfg(safety_distance=0.1))


def test_stop_candidate_keeps_cornered_robot_feasible():
    # a wall right in front: every forward rollout collides but stopping is safe
    wall = ConvexPolygon.from_bounds(0.3, -1.0, 0.6, 1.0)
    res = plan(RobotState((0.0, 0.0), 0.0), World([wall]), cfg(goal=(3.0, 0.0), safety_distance=0.1))
    assert res.feasible


def test_radio_term_pulls_toward_the_array():
    s0 = RobotState((3.0, 6.0), math.pi)
    goal = (-3.0, 6.0)
    plain = plan(s0, World(), cfg(goal=goal, horizon=20, candidate_count=128, rng_seed=1), ENV)
    greedy = plan(s0, World(), cfg(goal=goal, horizon=20, candidate_count=128, rng_seed=1,
                                   radio_weight=1e-5, progress_weight=0.0), ENV)
    assert greedy.states[-1].y < plain.states[-1].y


def test_step_reward_matches_rate_formula():
    s = RobotState((0.4, 2.0))
    direct = realized_rate(s.position, ENV)
    assert step_reward(s, ENV) == pytest.approx(direct, rel=1e-9)


def test_step_reward_fig4_golden():
    task = parse_scenario(shipped_scenarios()["fig4_rep"]).rep_task()
    assert step_reward(task.start, task.planning_env()) == pytest.approx(2764147.2657424062, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-6, 6), st.floats(0.5, 10))
def test_focusing_rate_dominates_steering(x, y):
    near = realized_rate((x, y), ENV)
    planar = realized_rate((x, y), replace(ENV, beam_model="planar"))
    assert near >= planar * (1 - 1e-9)


def test_rate_decreases_along_broadside():
    rates = [step_reward(RobotState((0.0, d)), ENV) for d in np.linspace(0.5, 20, 30)]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def _tiny_task(start, goal):
    return RepTask(World(bounds=(-1, -1, 4, 4)), start, cfg(goal=goal, goal_tolerance=0.2, candidate_count=32,
                                                        iterations=2, horizon=10),
                   GEOM, ArrayGeometry(32, 1.5e9, axis=(1.0, 0.0)), PL, LINK, time_limit=4.0)


def test_zero_length_episode_when_starting_at_goal():
    traces = run_variants(_tiny_task(RobotState((1.0, 1.0)), (1.05, 1.0)), seed=0)
    for tr in traces.values():
        assert tr.reached_goal and tr.rows == []
        assert math.isnan(tr.mean_rate)
        assert tr.min_clearance == math.inf


def test_short_episode_reaches_goal(tmp_path):
    traces = run_variants(_tiny_task(RobotState((0.0, 1.0)), (1.0, 1.0)), ["REP", "NFC-baseline"], seed=2)
    for tr in traces.values():
        assert tr.reached_goal
        assert tr.rows and tr.rows[0].t == 0.0
    tr = traces["REP"]
    tr.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,theta,v,omega,rate_bps,clearance_m,variant,seed"
    assert len(lines) == len(tr.rows) + 1


def test_baselines_share_one_trajectory():
    traces = run_variants(_tiny_task(RobotState((0.0, 1.0)), (2.0, 1.0)),
                          ["NFC-baseline", "FFC-baseline", "NFC-Planar"], seed=0)
    xs = {v: [(r.x, r.y) for r in tr.rows] for v, tr in traces.items()}
    assert xs["NFC-baseline"] == xs["FFC-baseline"] == xs["NFC-Planar"]
    assert traces["NFC-baseline"].mean_rate > traces["NFC-Planar"].mean_rate


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        run_variants(_tiny_task(RobotState((0.0, 1.0)), (1.0, 1.0)), ["bogus"])
