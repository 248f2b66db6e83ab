import json

import pytest

from neei.cli import EXIT_INFEASIBLE, EXIT_INVALID, EXIT_OK, main
from neei.nfchan import read_heatmap
from neei.runner import MANIFEST_NAME, RunManifest, sha256_file
from neei.scenario import shipped_scenarios

FIG4_TEXT = shipped_scenarios()["fig4_rep"].read_text()
BOXED_IN = """    - {box_m: [-4.4, 15.75, -3.6, 15.85]}
    - {box_m: [-4.4, 16.55, -3.6, 16.65]}
    - {box_m: [-4.4, 15.85, -4.2, 16.55]}
    - {box_m: [-3.8, 15.85, -3.6, 16.55]}
"""


@pytest.fixture
def short_fig4(tmp_path):
    p = tmp_path / "short.yaml"
    p.write_text(FIG4_TEXT.replace("time_limit_s: 60.0", "time_limit_s: 0.5"))
    return p


def run_dir(out):
    return sorted(p.name for p in out.iterdir())


def test_run_writes_traces_and_manifest(short_fig4, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(short_fig4), "--out", str(out), "--seed", "0", "--seed", "3"]) == EXIT_OK
    names = run_dir(out)
    for s in (0, 3):
        for v in ("REP", "NFC-baseline", "FFC-baseline", "NFC-Planar"):
            assert f"rep_seed{s}_{v}.csv" in names
    assert "summary.csv" in names and MANIFEST_NAME in names
    assert len(names) == 10
    m = RunManifest.load(out / MANIFEST_NAME)
    assert m.seeds == [0, 3] and m.scenario == "fig4_rep"
    for name, digest in m.files.items():
        assert sha256_file(out / name) == digest
    assert "files written" in capsys.readouterr().out


def test_variant_filter(short_fig4, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(short_fig4), "--out", str(out), "--seed", "1",
                 "--variant", "NFC-Planar"]) == EXIT_OK
    assert run_dir(out) == ["manifest.json", "rep_seed1_NFC-Planar.csv", "summary.csv"]


def test_unknown_variant_is_invalid(short_fig4, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(short_fig4), "--out", str(out), "--variant", "OCN"]) == EXIT_INVALID


def test_invalid_scenario_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(FIG4_TEXT.replace("num_elements: 640", "num_elements: 0"))
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "line 10" in capsys.readouterr().err
    assert main(["run", "--scenario", "no_such_scenario", "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["heatmap", "--scenario", "fig5_vbf", "--pose", "1;2", "--out", "x.txt"])
    assert e.value.code == 2


def test_bad_thread_count_is_invalid(short_fig4, tmp_path, monkeypatch):
    monkeypatch.setenv("NEEI_THREADS", "zero")
    assert main(["run", "--scenario", str(short_fig4), "--out", str(tmp_path / "o"), "--seed", "0"]) == EXIT_INVALID


def test_infeasible_run_exit_3_leaves_no_partial_outputs(tmp_path):
    text = FIG4_TEXT.replace("    # central box and clutter\n", "    # central box and clutter\n" + BOXED_IN)
    text = text.replace("time_limit_s: 60.0", "time_limit_s: 0.5")
    p = tmp_path / "boxed.yaml"
    p.write_text(text)
    out = tmp_path / "out"
    out.mkdir()
    (out / "keep.txt").write_text("pre-existing\n")
    assert main(["run", "--scenario", str(p), "--out", str(out), "--seed", "0"]) == EXIT_INFEASIBLE
    assert run_dir(out) == ["keep.txt"]


def test_rerun_is_byte_identical(short_fig4, tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--scenario", str(short_fig4), "--out", str(a), "--seed", "2"]) == EXIT_OK
    monkeypatch.setenv("NEEI_THREADS", "2")
    assert main(["run", "--scenario", str(short_fig4), "--out", str(b), "--seed", "2"]) == EXIT_OK
    assert (a / MANIFEST_NAME).read_bytes() == (b / MANIFEST_NAME).read_bytes()


def test_parallel_workers_match_serial(short_fig4, tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["run", "--scenario", str(short_fig4), "--seed", "0", "--seed", "1", "--variant", "REP"]
    assert main(args + ["--out", str(a)]) == EXIT_OK
    monkeypatch.setenv("NEEI_THREADS", "2")
    assert main(args + ["--out", str(b)]) == EXIT_OK
    assert json.loads((a / MANIFEST_NAME).read_text())["files"] == json.loads((b / MANIFEST_NAME).read_text())["files"]


@pytest.mark.parametrize("beam", ["VBF", "FFC", "NFC-Planar"])
def test_heatmap_command(tmp_path, beam):
    out = tmp_path / "h.txt"
    rc = main(["heatmap", "--scenario", "fig5_vbf", "--pose", "1.77,-0.30", "--out", str(out),
               "--beam", beam, "--resolution", "0.5"])
    assert rc == EXIT_OK
    hm = read_heatmap(out)
    assert hm.values.shape == (12, 12)


def test_heatmap_degenerate_region_is_invalid(tmp_path):
    rc = main(["heatmap", "--scenario", "fig5_vbf", "--pose", "1,1", "--out", str(tmp_path / "h.txt"),
               "--region", "0,0,0,1"])
    assert rc == EXIT_INVALID


def test_oracle_vbf(capsys):
    assert main(["oracle", "vbf", "--frames", "6", "--instances", "5"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "instance frames enumerated exact greedy ratio"
    assert len(out) == 7 and out[-1].startswith("# aggregate ratio")


def test_oracle_vbf_too_large_is_infeasible():
    assert main(["oracle", "vbf", "--frames", "20", "--instances", "1"]) == EXIT_INFEASIBLE


def test_oracle_geom(capsys):
    assert main(["oracle", "geom", "--pairs", "4", "--samples", "2000"]) == EXIT_OK
    last = capsys.readouterr().out.splitlines()[-1]
    assert last.startswith("# max deviation") and float(last.split()[-1]) < 1e-3


def test_oracle_rayleigh(capsys):
    assert main(["oracle", "rayleigh"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "2040.19" in out and "96.03" in out
