"""Command-line entry points for the experiment workflows."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _delay_from_args(args):
    from .netstream import Fixed, Ramp

    if getattr(args, "delay_ramp", None):
        d0, d1, dur = (float(x) for x in args.delay_ramp.split(","))
        return Ramp(d0, d1, dur)
    return Fixed(float(getattr(args, "delay_ms", 0.0) or 0.0))


def cmd_fuse(args) -> int:
    """Session file -> TSDF dump + PLY point cloud."""
    from .camera import DEFAULT_INTRINSICS
    from .netstream import read_session_frames
    from .tsdf import auto_volume, dump_volume, export_ply, integrate_frame

    frames = read_session_frames(args.session)
    if not frames:
        print("session holds no frames", file=sys.stderr)
        return 1
    vol = auto_volume(frames[0].pose, resolution=args.resolution,
                      voxel_size=args.voxel_size)
    for frame in frames:
        integrate_frame(vol, frame, DEFAULT_INTRINSICS)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_volume(vol, out / "volume.tsdf")
    n = export_ply(vol, out / "cloud.ply")
    print(f"fused {len(frames)} frames; {n} surface points -> {out}")
    return 0


def cmd_haptic_bench(args) -> int:
    """Corner traverse traces and/or the resolution timing sweep."""
    from .bench import corner_bench, timing_bench

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode in ("corner", "both"):
        res = corner_bench(out, resolution=args.resolution)
        print(f"corner bench: shaded max step {res.max_shaded_step * 1e3:.2f} mm, "
              f"naive max step {res.max_naive_step * 1e3:.2f} mm, "
              f"runtime {res.runtime_s:.2f} s")
    if args.mode in ("timing", "both"):
        resolutions = tuple(int(r) for r in args.resolutions.split(","))
        rows = timing_bench(resolutions=resolutions,
                            out_csv=out / "timing.csv")
        for r in rows:
            print(f"  {r.resolution}^3: mean tick {r.mean_tick_ms:.3f} ms "
                  f"(raycast {r.raycast_ms:.1f} ms)")
    return 0


def cmd_segment(args) -> int:
    """Frame from a session + seed pixel -> label PNG (+ metrics vs truth)."""
    from .camera import DEFAULT_INTRINSICS
    from .netstream import read_session_frames
    from .segment import (RegionParams, evaluate, load_label_png, region_grow,
                          save_label_png)

    frames = read_session_frames(args.session)
    frame = frames[args.index]
    u, v = (int(x) for x in args.seed.split(","))
    labels, stats = region_grow(frame.color, frame.depth, (u, v),
                                RegionParams(threshold=args.threshold),
                                DEFAULT_INTRINSICS)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_label_png(labels, out / "labels.png")
    print(f"grew {stats.count} pixels from seed ({u}, {v})")
    if args.truth:
        truth = load_label_png(args.truth)
        m = evaluate(labels, truth)
        (out / "metrics.csv").write_text(
            "pri,bde,gce\n" + m.csv_row() + "\n")
        print(f"pri={m.pri:.5f} bde={m.bde:.3f} gce={m.gce:.5f}")
    return 0


def cmd_plan(args) -> int:
    """Grid JSON + endpoints -> path JSON."""
    from .planner import (OccupancyGrid, RrtParams, export_plan_json, rrt_plan)

    with open(args.grid) as fh:
        payload = json.load(fh)
    grid = OccupancyGrid.from_json(payload.get("grid", payload))
    start = tuple(float(x) for x in args.start.split(","))
    goal = tuple(float(x) for x in args.goal.split(","))
    plan = rrt_plan(grid, start, goal, RrtParams(seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_plan_json(grid, plan, out / "path.json")
    print(f"path cost {plan.cost:.3f} m, {len(plan.waypoints)} waypoints")
    return 0


def cmd_simulate(args) -> int:
    """Run a scenario preset and write the metrics bundle."""
    from .orchestrator import SCENARIOS, run_scenario
    from .simworld import load_scene

    if args.scenario == "straight":
        config = SCENARIOS["straight"](seed=args.seed,
                                       delay=_delay_from_args(args))
    else:
        config = SCENARIOS[args.scenario](seed=args.seed)
        config.delay = _delay_from_args(args)
    if args.scene:
        config.scene = load_scene(args.scene)
    if args.window:
        config.predictor_window = args.window
    if args.resolution:
        config.resolution = args.resolution
    result = run_scenario(config, args.out)
    status = "completed" if result.completed else "FAILED"
    print(f"scenario {args.scenario}: {status}; te={result.te_s:.1f} s "
          f"lp={result.lp_m:.2f} m goal_err="
          f"{result.goal_error_m if result.goal_error_m is not None else 'n/a'}")
    for name, path in result.artifacts.items():
        print(f"  {name}: {path}")
    return 0 if result.completed else 2


def cmd_serve(args) -> int:
    """Live session with the WebSocket console endpoint; blocks until ^C."""
    from .netstream import Fixed
    from .orchestrator import SCENARIOS, ScenarioConfig
    from .server import serve
    from .simworld import load_scene

    if args.scene:
        from .orchestrator import ScenarioConfig
        config = ScenarioConfig(scene=load_scene(args.scene),
                                delay=_delay_from_args(args), seed=args.seed)
    else:
        config = SCENARIOS["obstacle"](seed=args.seed)
        config.delay = _delay_from_args(args)
    config.max_duration_s = float("inf")
    handle = serve(config, host=args.host, port=args.port)
    print(f"serving on ws://{handle.host}:{handle.port} (ctrl-c to stop)",
          flush=True)
    try:
        handle._thread.join()
    except KeyboardInterrupt:
        handle.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="telehaptic",
        description="Desk-scale haptic mixed-reality teleoperation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse a recorded session into a TSDF")
    p.add_argument("--session", required=True)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--voxel-size", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("haptic-bench", help="corner traces and timing sweep")
    p.add_argument("--mode", choices=("corner", "timing", "both"),
                   default="both")
    p.add_argument("--resolution", type=int, default=128,
                   help="resolution for the corner bench")
    p.add_argument("--resolutions", default="64,128,256,384,512",
                   help="comma list for the timing sweep")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_haptic_bench)

    p = sub.add_parser("segment", help="seeded growth on a recorded frame")
    p.add_argument("--session", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--seed", required=True, metavar="U,V")
    p.add_argument("--threshold", type=float, default=12.0)
    p.add_argument("--truth", help="16-bit label PNG to score against")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("plan", help="RRT between two points on a saved grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--start", required=True, metavar="X,Y")
    p.add_argument("--goal", required=True, metavar="X,Y")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run a scripted scenario")
    p.add_argument("--scenario", choices=("straight", "approach", "obstacle"),
                   default="straight")
    p.add_argument("--scene", help="scene JSON overriding the preset")
    p.add_argument("--delay-ms", type=float, default=0.0,
                   help="fixed one-way delay")
    p.add_argument("--delay-ramp", metavar="D0,D1,DUR",
                   help="one-way ramp in ms over DUR seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, help="predictor window")
    p.add_argument("--resolution", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="live session for the operator console")
    p.add_argument("--scene", help="scene JSON (defaults to the demo scene)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--delay-ms", type=float, default=0.0)
    p.add_argument("--delay-ramp", metavar="D0,D1,DUR")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
