"""Command-line entry point ``neei``.

Exit codes: 0 on success, 2 when the scenario or arguments fail validation,
3 when the task itself is infeasible.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import oracles
from .errors import (
    DegenerateRegion,
    DimensionMismatch,
    InstanceTooLarge,
    NoFeasiblePlan,
    ParseError,
    TargetOnElement,
    TooManyFramesForExact,
    ValidationError,
    ZeroGain,
)
from .nfchan import ArrayGeometry, gain_heatmap, write_heatmap
from .runner import heatmap_beams, run
from .scenario import parse_scenario, resolve_scenario

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 2, 3


def _pose(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y got {text!r}") from None
    return x, y


def _region(text: str) -> tuple[float, float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"expected xmin,ymin,xmax,ymax got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neei", description="Near-field edge robotics experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write traces, heatmaps and a manifest")
    r.add_argument("--scenario", required=True, help="scenario file or shipped scenario name")
    r.add_argument("--out", required=True, type=Path, help="output directory")
    r.add_argument("--seed", type=int, action="append", help="run only this seed (repeatable)")
    r.add_argument("--variant", action="append", help="run only this variant (repeatable)")

    h = sub.add_parser("heatmap", help="beam gain heatmap focused at a pose")
    h.add_argument("--scenario", required=True)
    h.add_argument("--pose", required=True, type=_pose, help="x,y in meters")
    h.add_argument("--out", required=True, type=Path)
    h.add_argument("--beam", default="VBF", choices=("VBF", "FFC", "NFC-Planar"),
                   help="VBF focuses with the large array; FFC and NFC-Planar steer")
    h.add_argument("--region", type=_region, help="xmin,ymin,xmax,ymax (default: scenario's or 12 m box)")
    h.add_argument("--resolution", type=float, default=None, help="cell size in meters")
    h.add_argument("--normalize", action="store_true", help="divide by the channel norm at each cell")

    o = sub.add_parser("oracle", help="brute-force reference checks")
    osub = o.add_subparsers(dest="oracle", required=True)
    ov = osub.add_parser("vbf", help="enumeration vs exact vs greedy frame selection")
    ov.add_argument("--frames", type=int, default=12, help="largest instance size")
    ov.add_argument("--instances", type=int, default=200)
    ov.add_argument("--seed", type=int, default=0)
    og = osub.add_parser("geom", help="polygon distance vs boundary sampling")
    og.add_argument("--pairs", type=int, default=100)
    og.add_argument("--samples", type=int, default=10_000)
    og.add_argument("--seed", type=int, default=0)
    osub.add_parser("rayleigh", help="Rayleigh distances and far-field phase error sweep")
    return p


def _cmd_run(args) -> int:
    scenario = parse_scenario(resolve_scenario(args.scenario))
    manifest = run(scenario, args.out, args.seed, args.variant)
    print(f"{scenario.name}: {len(manifest.files)} files written to {args.out}")
    return EXIT_OK


def _cmd_heatmap(args) -> int:
    scenario = parse_scenario(resolve_scenario(args.scenario))
    spec = getattr(scenario.task, "heatmap", None)
    x, y = args.pose
    region = args.region or (spec.region_m if spec else (x - 6.0, y - 6.0, x + 6.0, y + 6.0))
    resolution = args.resolution or (spec.resolution_m if spec else 0.1)
    geom, beam = heatmap_beams(scenario, args.pose)[args.beam]
    hm = gain_heatmap(geom, beam, region, resolution, scenario.radio.pathloss.build(), normalize=args.normalize)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_heatmap(hm, args.out)
    print(f"{args.beam} heatmap {hm.nx}x{hm.ny} written to {args.out}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    if args.oracle == "vbf":
        rows = oracles.vbf_oracle(args.instances, args.frames, args.seed)
        print("instance frames enumerated exact greedy ratio")
        for r in rows:
            print(f"{r.instance} {r.frames} {r.enumerated:.6f} {r.exact:.6f} {r.greedy:.6f} {r.ratio:.4f}")
        agg = sum(r.greedy for r in rows) / max(sum(r.exact for r in rows), 1e-300)
        mismatch = max(abs(r.exact - r.enumerated) for r in rows)
        print(f"# aggregate ratio {agg:.6f}, worst ratio {min(r.ratio for r in rows):.6f}, "
              f"max exact-vs-enumeration gap {mismatch:.3e}")
    elif args.oracle == "geom":
        rows = oracles.geom_oracle(args.pairs, args.samples, args.seed)
        print("pair exact sampled deviation")
        for r in rows:
            print(f"{r.pair} {r.exact:.9f} {r.sampled:.9f} {r.deviation:.3e}")
        print(f"# max deviation {max(r.deviation for r in rows):.3e}")
    else:
        print("num_elements carrier_hz aperture_m wavelength_m rayleigh_m")
        for r in oracles.rayleigh_table():
            print(f"{r.num_elements} {r.carrier_freq:.6e} {r.aperture:.6f} {r.wavelength:.6f} {r.rayleigh:.3f}")
        geom = ArrayGeometry(640, 30e9, axis=(1.0, 0.0))
        dists = [2.0] + [k * geom.aperture for k in (10, 100, 1000)]
        print("distance_m max_phase_error_rad")
        for d, err in oracles.phase_error_sweep(geom, dists):
            print(f"{d:.3f} {err:.6f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": _cmd_run, "heatmap": _cmd_heatmap, "oracle": _cmd_oracle}[args.command]
    try:
        return handler(args)
    except (ParseError, ValidationError, ValueError, DegenerateRegion, DimensionMismatch, TargetOnElement) as exc:
        print(f"neei: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NoFeasiblePlan, ZeroGain, TooManyFramesForExact, InstanceTooLarge) as exc:
        print(f"neei: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
