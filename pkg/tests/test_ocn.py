import math
from dataclasses import replace

import numpy as np
import pytest

from neei.geomworld import ConvexPolygon, CostToGo, RobotState, World
from neei.nfchan import ArrayGeometry, PathlossModel, db_to_linear
from neei.ocn import (
    CollaborationDecision,
    OcnConfig,
    OcnTask,
    RobotAgent,
    RobotSpec,
    Uplink,
    collaboration_gain,
    decide,
    local_control,
    power_control,
    run_ocn,
    uplink_sinr_db,
)
from neei.rep import RepConfig

NFC = ArrayGeometry(640, 30e9, center=(2.0, 5.0), axis=(1.0, 0.0))
FFC = ArrayGeometry(32, 1.5e9, center=(2.0, 5.0), axis=(1.0, 0.0))
PL = PathlossModel(10 ** -6.2, 2.0)
UPLINK = Uplink(NFC, PL)
CFG = OcnConfig(edge_center=(2.0, 5.0))
ECFG = RepConfig(horizon=20, candidate_count=64, iterations=3, safety_distance=0.1, noise_correlation=0.9)
WALL_WORLD = World([ConvexPolygon.from_bounds(0.6, -0.3, 0.8, 0.3)], bounds=(-2, -3, 6, 3))


def stuck_agent(x0=-0.05):
    # held at the stop distance in front of the wall for a full window
    a = RobotAgent(1, RobotState((x0, 0.0), 0.0), [(-1.0, 0.0), (4.0, 0.0)])
    a.update_progress(0.0)
    a.update_progress(1.0)
    return a


def field(world=WALL_WORLD, goal=(4.0, 0.0)):
    return CostToGo.build(world, goal, 0.1, 0.25, world.bounds)


def test_stuck_detection():
    a = RobotAgent(1, RobotState((0.0, 0.0)), [(0.0, 0.0), (5.0, 0.0)], stuck_window=1.0, progress_eps=0.05)
    a.update_progress(0.0)
    assert not a.is_stuck(0.0)  # no full window observed yet
    a.state = RobotState((0.5, 0.0))
    a.update_progress(1.0)
    assert not a.is_stuck(1.0)
    a.update_progress(2.0)
    assert a.is_stuck(2.0)


def test_energy_increments_nonnegative():
    a = stuck_agent()
    a.add_energy(0.3)
    with pytest.raises(ValueError):
        a.add_energy(-0.1)
    assert a.comm_energy == 0.3


def test_decision_reason_validated():
    with pytest.raises(ValueError):
        CollaborationDecision(False, 0.0, 0.0, "bored")


def test_local_control_halts_at_stop_distance():
    u = local_control(stuck_agent(), WALL_WORLD, 1.0, ECFG, CFG)
    assert (u.v, u.omega) == (0.0, 0.0)


def test_edge_plan_beats_local_when_stuck():
    gain, feasible = collaboration_gain(stuck_agent(), WALL_WORLD, 1.0, ECFG, CFG, field(),
                                        np.random.default_rng(0))
    assert feasible and gain > CFG.gain_threshold


def test_decide_not_stuck_is_no_gain():
    a = RobotAgent(1, RobotState((-0.05, 0.0), 0.0), [(-1.0, 0.0), (4.0, 0.0)])
    a.update_progress(0.0)
    d = decide(a, WALL_WORLD, 0.0, CFG, ECFG, UPLINK, (), field(), np.random.default_rng(0))
    assert (d.engage, d.reason) == (False, "no-gain")


def test_decide_engages_with_gain_and_sinr():
    d = decide(stuck_agent(), WALL_WORLD, 1.0, CFG, ECFG, UPLINK, (), field(), np.random.default_rng(0))
    assert d.engage and d.reason == "engaged"
    assert d.sinr_db >= CFG.sinr_gate_db and d.predicted_gain >= CFG.gain_threshold


def test_decide_sinr_gate_blocks():
    noisy = replace(CFG, noise_dbm=-20.0)
    d = decide(stuck_agent(), WALL_WORLD, 1.0, noisy, ECFG, UPLINK, (), field(), np.random.default_rng(0))
    assert (d.engage, d.reason) == (False, "sinr-blocked")
    assert d.sinr_db < noisy.sinr_gate_db


def test_decide_gain_threshold_blocks():
    strict = replace(CFG, gain_threshold=5.0)
    d = decide(stuck_agent(), WALL_WORLD, 1.0, strict, ECFG, UPLINK, (), field(), np.random.default_rng(0))
    assert (d.engage, d.reason) == (False, "no-gain")


def test_decide_blocked_environment():
    box = [ConvexPolygon.from_bounds(-1, -1, -0.5, 1), ConvexPolygon.from_bounds(0.5, -1, 1, 1),
           ConvexPolygon.from_bounds(-0.5, 0.5, 0.5, 1), ConvexPolygon.from_bounds(-0.5, -1, 0.5, -0.5)]
    world = World(box, bounds=(-2, -2, 6, 2))
    a = RobotAgent(2, RobotState((0.0, 0.0), 0.0), [(0.0, 0.0), (4.0, 0.0)])
    a.update_progress(0.0)
    a.update_progress(1.0)
    d = decide(a, world, 1.0, CFG, ECFG, UPLINK, (), field(world), np.random.default_rng(0))
    assert (d.engage, d.reason) == (False, "blocked-environment")


def test_interference_lowers_sinr():
    alone = uplink_sinr_db(UPLINK, (1.0, 3.0), 0.1, [], CFG.noise_power)
    shared = uplink_sinr_db(UPLINK, (1.0, 3.0), 0.1, [((1.0, 2.5), 0.1)], CFG.noise_power)
    assert shared < alone


def test_power_control_single_robot():
    p = power_control(UPLINK, [(1.0, 3.0)], 20.0, CFG.noise_power, 1.0)
    g = UPLINK.gains([(1.0, 3.0)])[0, 0]
    assert p[0] == pytest.approx(100.0 * CFG.noise_power / g, rel=1e-12)


def test_power_control_meets_target_exactly():
    pos = [(1.0, 3.0), (3.0, 3.0), (2.0, 1.0)]
    p = power_control(UPLINK, pos, 20.0, CFG.noise_power, 1.0)
    G = UPLINK.gains(pos)
    for i in range(3):
        interf = sum(p[j] * G[i, j] for j in range(3) if j != i)
        assert p[i] * G[i, i] / (CFG.noise_power + interf) == pytest.approx(db_to_linear(20.0), rel=1e-9)


def test_power_control_unreachable_target_uses_p_max():
    p = power_control(UPLINK, [(1.0, 3.0), (1.0001, 3.0)], 20.0, CFG.noise_power, 0.7)
    np.testing.assert_array_equal(p, [0.7, 0.7])
    assert power_control(UPLINK, [], 20.0, CFG.noise_power, 1.0).size == 0


def test_config_invariants():
    with pytest.raises(ValueError):
        OcnConfig(uplink_power=2.0, max_uplink_power=1.0)
    with pytest.raises(ValueError):
        OcnConfig(edge_slots=0)
    with pytest.raises(ValueError):
        OcnConfig(sinr_gate_db=math.inf)


def _task(robots, world=WALL_WORLD, time_limit=20.0):
    return OcnTask(world, tuple(robots), CFG, ECFG, NFC, FFC, PL, time_limit)


def test_unobstructed_robot_spends_no_energy(tmp_path):
    task = _task([RobotSpec(4, ((-1.0, -2.0), (3.0, -2.0)))], time_limit=15.0)
    tr = run_ocn(task, "OCN", seed=0)
    assert tr.all_done
    assert tr.energy() == {4: 0.0} and tr.engagement_counts() == {4: 0}
    assert tr.finish_times[4] == pytest.approx(8.0, abs=0.5)
    tr.write_csv(tmp_path / "t.csv")
    tr.write_events(tmp_path / "e.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == ",".join(tr.TRACE_COLUMNS)
    always = run_ocn(task, "NFC-always", seed=0)
    assert always.fleet_energy > 0.0


def test_wall_forces_one_engagement():
    task = _task([RobotSpec(1, ((-1.0, 0.0), (4.0, 0.0)))])
    tr = run_ocn(task, "OCN", seed=0)
    assert tr.all_done
    assert tr.engagement_counts()[1] >= 1
    assert tr.energy()[1] > 0
    assert tr.min_clearance >= ECFG.safety_distance - 1e-6
    assert any(e.reason == "engaged" for e in tr.events)


def test_unknown_variant():
    with pytest.raises(ValueError):
        run_ocn(_task([RobotSpec(1, ((0.0, -2.0), (1.0, -2.0)))]), "sometimes")


def test_engagements_on_shipped_scenario_pass_both_gates():
    from neei.scenario import parse_scenario, shipped_scenarios

    task = parse_scenario(shipped_scenarios()["fig6_ocn"]).ocn_task()
    trace = run_ocn(task, "OCN", 0)
    assert trace.all_done and trace.min_clearance >= 0.1 - 1e-9
    rows = {(r.robot_id, round(r.t, 9)): r for r in trace.rows}
    checked = 0
    for rid, times in trace.engagements.items():
        for t in times:
            r = rows[(rid, round(t, 9))]
            assert r.engaged
            assert r.sinr_db >= task.cfg.sinr_gate_db
            assert r.gain_m >= task.cfg.gain_threshold
            checked += 1
    assert checked == 4
