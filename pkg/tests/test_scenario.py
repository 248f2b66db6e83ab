import math

import pytest

from neei.errors import ParseError, ValidationError
from neei.nfchan import dbm_to_watt
from neei.scenario import (
    dump_scenario,
    loads_scenario,
    parse_scenario,
    resolve_scenario,
    shipped_scenarios,
    write_scenario,
)

SHIPPED = shipped_scenarios()
FIG4_TEXT = SHIPPED["fig4_rep"].read_text()


def test_three_scenarios_ship():
    assert set(SHIPPED) == {"fig4_rep", "fig5_vbf", "fig6_ocn"}


@pytest.mark.parametrize("name", sorted(SHIPPED))
def test_round_trip(name, tmp_path):
    sc = parse_scenario(SHIPPED[name])
    again = loads_scenario(dump_scenario(sc))
    assert again == sc
    assert again.digest() == sc.digest()
    write_scenario(sc, tmp_path / "s.yaml")
    assert parse_scenario(tmp_path / "s.yaml") == sc


def test_fig4_radio_values():
    sc = parse_scenario(SHIPPED["fig4_rep"])
    link = sc.radio.link.build()
    assert link.bandwidth == 200e3
    assert link.noise_power == pytest.approx(dbm_to_watt(-80.0), rel=1e-15)
    assert sc.radio.pathloss.build().exponent == 2.0
    assert sc.kind == "rep" and len(sc.seeds) == 20
    assert sc.variants == ["REP", "NFC-baseline", "FFC-baseline", "NFC-Planar"]


def test_fig5_heatmap_pose():
    sc = parse_scenario(SHIPPED["fig5_vbf"])
    assert tuple(sc.task.heatmap.pose_m) == (1.77, -0.30)
    assert len(sc.task.power_budgets_w) == 10
    frames = sc.vbf_frames(0)
    assert frames == sc.vbf_frames(0)
    assert all(0.0 <= f.score <= 1.0 for f in frames)


def test_fig6_builds_four_robots():
    task = parse_scenario(SHIPPED["fig6_ocn"]).ocn_task()
    assert [r.id for r in task.robots] == [1, 2, 3, 4]
    assert task.cfg.sinr_gate_db == 20.0
    assert len(task.world.dynamic) == 1


def test_digest_changes_with_content():
    sc = parse_scenario(SHIPPED["fig4_rep"])
    other = loads_scenario(FIG4_TEXT.replace("time_limit_s: 60.0", "time_limit_s: 61.0"))
    assert sc.digest() != other.digest()


def test_empty_file_is_parse_error():
    with pytest.raises(ParseError) as e:
        loads_scenario("")
    assert e.value.line == 1
    with pytest.raises(ParseError):
        loads_scenario("# only a comment\n")


def test_non_mapping_is_parse_error():
    with pytest.raises(ParseError):
        loads_scenario("- 1\n- 2\n")


def test_yaml_syntax_error_carries_line():
    with pytest.raises(ParseError) as e:
        loads_scenario(FIG4_TEXT.replace("name: fig4_rep", "name: [fig4"))
    assert e.value.line == 6


def test_two_vertex_polygon_is_validation_error():
    text = FIG4_TEXT.replace("- {box_m: [-2.2, 17.8, -1.6, 18.4]}", "- {vertices_m: [[0, 0], [1, 0]]}")
    with pytest.raises(ValidationError) as e:
        loads_scenario(text)
    assert e.value.field == "world.obstacles.10"
    assert e.value.line == 29


def test_unknown_key_is_parse_error_with_location():
    text = FIG4_TEXT.replace("  start_heading_rad: 0.0", "  start_heading_rad: 0.0\n  bogus_key: 3")
    with pytest.raises(ParseError) as e:
        loads_scenario(text)
    assert e.value.field == "task.bogus_key"
    assert e.value.line == 34


def test_range_violation_is_validation_error():
    with pytest.raises(ValidationError) as e:
        loads_scenario(FIG4_TEXT.replace("num_elements: 640", "num_elements: -3"))
    assert e.value.field == "radio.arrays.nfc.num_elements"
    assert e.value.line == 10


def test_unsupported_version():
    with pytest.raises(ParseError):
        loads_scenario(FIG4_TEXT.replace("version: 1", "version: 2"))


def test_duplicate_seeds_rejected():
    with pytest.raises(ValidationError):
        loads_scenario(FIG4_TEXT.replace("seeds: [0, 1,", "seeds: [0, 0,"))


def test_unknown_variant_rejected():
    text = FIG4_TEXT + "  variants: [REP, Teleport]\n"
    with pytest.raises(ValidationError):
        loads_scenario(text)


def test_axis_degrees_become_unit_vectors():
    sc = parse_scenario(SHIPPED["fig6_ocn"])
    ax = sc.nfc_geom().axis
    assert math.hypot(*ax) == pytest.approx(1.0, abs=1e-15)
    assert math.degrees(math.atan2(ax[1], ax[0])) == pytest.approx(30.0)


def test_resolve_by_name_and_path(tmp_path):
    assert resolve_scenario("fig4_rep") == SHIPPED["fig4_rep"]
    assert resolve_scenario(str(SHIPPED["fig5_vbf"])) == SHIPPED["fig5_vbf"]
    with pytest.raises(ParseError):
        resolve_scenario(str(tmp_path / "missing.yaml"))
