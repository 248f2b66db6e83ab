"""Experiment orchestration: run a scenario and write its outputs.

Every run writes into a fresh staging directory next to ``out_dir`` and moves
the files into place only once all of them exist, so a failed run leaves no
partial outputs behind. Jobs (one per seed) may run in worker processes,
bounded by ``NEEI_THREADS``; files are named per seed and variant, and the
manifest is assembled afterwards in a fixed order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Sequence

from . import ocn, rep, vbf
from .nfchan import focused_beam, gain_heatmap, planar_beam, write_heatmap
from .scenario import Scenario

MANIFEST_NAME = "manifest.json"


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def worker_count(jobs: int) -> int:
    """Worker processes to use: ``NEEI_THREADS`` (default 1), at most ``jobs``."""
    raw = os.environ.get("NEEI_THREADS", "1").strip() or "1"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"NEEI_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"NEEI_THREADS must be a positive integer, got {raw!r}")
    return max(1, min(n, jobs))


@dataclass
class RunManifest:
    scenario: str
    scenario_hash: str
    tool_version: str
    seeds: list[int]
    variants: list[str]
    files: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {
            "scenario": self.scenario,
            "scenario_hash": self.scenario_hash,
            "tool_version": self.tool_version,
            "seeds": self.seeds,
            "variants": self.variants,
            "files": dict(sorted(self.files.items())),
            "config": self.config,
        }
        return json.dumps(body, indent=2, sort_keys=False) + "\n"

    @classmethod
    def load(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["scenario"], data["scenario_hash"], data["tool_version"], data["seeds"],
                   data["variants"], data["files"], data.get("config", {}))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _fmt(x: float) -> str:
    return rep.fmt(float(x))


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# per-task jobs; each returns summary rows and writes its own files


def _rep_job(scenario: Scenario, seed: int, variants: list[str], out: Path) -> list[list]:
    traces = rep.run_variants(scenario.rep_task(), variants, seed)
    rows = []
    for v in variants:
        tr = traces[v]
        tr.write_csv(out / f"rep_seed{seed}_{v}.csv")
        rows.append([seed, v, _fmt(tr.mean_rate), _fmt(tr.min_clearance), _fmt(tr.min_edge_distance),
                     int(tr.reached_goal), len(tr.rows)])
    return rows


def _vbf_job(scenario: Scenario, seed: int, variants: list[str], out: Path) -> list[list]:
    t = scenario.task
    frames = scenario.vbf_frames(seed)
    vbf.write_frames(frames, out / f"vbf_seed{seed}_frames.csv")
    pl, link = scenario.radio.pathloss.build(), scenario.radio.link.build()
    nfc, ffc = scenario.nfc_geom(), scenario.ffc_geom()
    rows = []
    for k, budget in enumerate(t.power_budgets_w):
        for b in variants:
            rpt = vbf.run_vbf_episode(frames, nfc, ffc, pl, link, budget, b, t.budget_mode)
            rpt.write_csv(out / f"vbf_seed{seed}_{b}_budget{k}.csv")
            rows.append([seed, b, k, _fmt(budget), _fmt(rpt.total_score), rpt.frames_delivered,
                         _fmt(rpt.power_used)])
    return rows


def _ocn_job(scenario: Scenario, seed: int, variants: list[str], out: Path) -> list[list]:
    task = scenario.ocn_task()
    rows = []
    for v in variants:
        tr = ocn.run_ocn(task, v, seed)
        tr.write_csv(out / f"ocn_seed{seed}_{v}.csv")
        tr.write_events(out / f"ocn_seed{seed}_{v}_events.csv")
        counts, energy = tr.engagement_counts(), tr.energy()
        for r in task.robots:
            rows.append([seed, v, r.id, counts.get(r.id, 0), _fmt(energy.get(r.id, 0.0)),
                         _fmt(tr.finish_times.get(r.id, float("nan")))])
    return rows


_JOBS = {"rep": _rep_job, "vbf": _vbf_job, "ocn": _ocn_job}
_SUMMARY_HEADERS = {
    "rep": ("seed", "variant", "mean_rate_bps", "min_clearance_m", "min_edge_distance_m", "reached_goal", "ticks"),
    "vbf": ("seed", "baseline", "budget_index", "power_budget_w", "total_score", "frames_delivered",
            "power_used_w"),
    "ocn": ("seed", "variant", "robot_id", "engagements", "energy_j", "finish_time_s"),
}


def _job(args):
    scenario, seed, variants, out = args
    return _JOBS[scenario.kind](scenario, seed, variants, Path(out))


def heatmap_beams(scenario: Scenario, pose) -> dict:
    """The three beams compared in the frame-selection heatmaps, keyed by scheme.

    Near-field focusing on the large array, planar steering on the small
    array, and planar steering on the large array.
    """
    pl = scenario.radio.pathloss.build()
    nfc, ffc = scenario.nfc_geom(), scenario.ffc_geom()
    return {
        "VBF": (nfc, focused_beam(nfc, pose, pl)),
        "FFC": (ffc, planar_beam(ffc, pose, pl)),
        "NFC-Planar": (nfc, planar_beam(nfc, pose, pl)),
    }


def write_heatmaps(scenario: Scenario, out: Path) -> list[Path]:
    spec = getattr(scenario.task, "heatmap", None)
    if spec is None:
        return []
    pl = scenario.radio.pathloss.build()
    paths = []
    for name, (geom, beam) in heatmap_beams(scenario, spec.pose_m).items():
        hm = gain_heatmap(geom, beam, spec.region_m, spec.resolution_m, pl, normalize=spec.normalize)
        p = out / f"heatmap_{name}.txt"
        write_heatmap(hm, p)
        paths.append(p)
    return paths


def run(scenario: Scenario, out_dir, seeds: Sequence[int] | None = None,
        variants: Sequence[str] | None = None) -> RunManifest:
    """Run every requested seed and variant and write traces, heatmaps and a manifest.

    ``seeds`` and ``variants`` default to the scenario's own lists. On any
    error nothing is left in ``out_dir`` from this run.
    """
    seeds = list(scenario.seeds if seeds is None else seeds)
    variants = list(scenario.variants if variants is None else variants)
    unknown = [v for v in variants if v not in scenario.variants]
    if unknown:
        raise ValueError(f"variants {unknown} are not part of scenario {scenario.name!r} "
                         f"(have {scenario.variants})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".neei-run-", dir=out_dir))
    try:
        jobs = [(scenario, s, variants, str(stage)) for s in seeds]
        workers = worker_count(len(jobs))
        if workers == 1:
            results = [_job(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_job, jobs))
        _write_rows(stage / "summary.csv", _SUMMARY_HEADERS[scenario.kind],
                    [row for rows in results for row in rows])
        write_heatmaps(scenario, stage)
        manifest = RunManifest(scenario.name, scenario.digest(), tool_version(), seeds, variants,
                               config=scenario.to_dict())
        for p in sorted(stage.iterdir()):
            manifest.files[p.name] = sha256_file(p)
        (stage / MANIFEST_NAME).write_text(manifest.to_json(), encoding="utf-8")
        for p in sorted(stage.iterdir()):
            os.replace(p, out_dir / p.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return manifest
