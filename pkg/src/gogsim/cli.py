"""Command line: run suites, score user masks, replay trajectories, print config defaults."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, harness, maskio, metrics
from . import cloth as clothsim
from .geometry import Line2D
from .gripper import new_gripper
from .planner import PlanningError, Trajectory, execute

log = logging.getLogger("gogsim")


def cmd_run(args) -> int:
    suite = harness.load_catalog() if args.suite == "catalog" else harness.load_suite(args.suite)
    report = harness.run_suite(suite, args.out, seed=args.seed, jobs=args.jobs, frames=args.frames,
                               frame_stride=args.frame_stride, figures=not args.no_figures)
    n_bad = sum(r["status"] != "ok" for r in report.rows)
    for name, agg in report.summary["scenarios"].items():
        head = " ".join(f"{k}={v:.4g}" for k, v in agg["headline"].items())
        lift = agg.get("lift_percent")
        if lift:
            head += " " + " ".join(f"{k}={v:.0f}%" for k, v in lift.items())
        print(f"{name:24s} {agg['valid']}/{agg['trials']} valid  {head}")
    print(f"wrote {args.out}/rows.csv and summary.json ({len(report.rows)} trials, {n_bad} failed)")
    return 0 if n_bad == 0 else 1


def cmd_score(args) -> int:
    pre = maskio.read_mask(args.pre, args.threshold, args.scale)
    post = maskio.read_mask(args.post, args.threshold, args.scale, pre.origin if args.scale else None)
    line = Line2D.parse(args.fold_line)
    truth = metrics.generate_fold_ground_truth(pre, line)
    result = {"iou": metrics.iou(post, truth), "pre_pixels": pre.count, "post_pixels": post.count,
              "truth_pixels": truth.count}
    if args.image:
        px, _, _ = maskio.read_image(args.image)
        if px.shape != post.bits.shape:
            print(f"error: image {px.shape[::-1]} and post mask {post.bits.shape[::-1]} differ in size",
                  file=sys.stderr)
            return 2
        img = metrics.GrayImage(px, post.scale, post.origin)
        result["wr"] = metrics.wrinkle_penalty(img, post, args.margin, args.low, args.high)
    if args.truth_out:
        maskio.write_mask_pgm(truth, args.truth_out)
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_replay(args) -> int:
    traj = Trajectory.from_text(Path(args.trajectory).read_text())
    if args.scenario:
        suite = harness.load_suite(args.scenario)
        s = suite.scenarios[0]
        cloth = harness.initial_cloth(s, (s.position[0], s.position[1], s.yaw_deg), harness.trial_rng(0, s.name, 0))
        params = s.gripper
    else:
        cloth, _ = clothsim.settle(clothsim.build_cloth(clothsim.ClothSpec()), 1.0, harness.KINETIC_TOL)
        params = new_gripper().params
    rep = execute(traj, cloth, new_gripper(params), task="replay", keep_snapshots=args.frames is not None)
    for e in rep.events:
        detail = " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in e.detail)
        print(f"{e.t:8.3f}s  {e.kind:13s} {e.finger:5s} {detail}".rstrip())
    final = rep.final_cloth
    print(f"duration {traj.duration:.3f}s, final max height {final.positions[:, 2].max():.4f} m, "
          f"centroid ({final.positions[:, 0].mean():.4f}, {final.positions[:, 1].mean():.4f}) m")
    if args.out:
        Path(args.out).write_text(rep.to_json() + "\n")
    if args.frames is not None:
        paths = harness.render_frames(rep, args.frame_stride, args.frames)
        print(f"wrote {len(paths)} frames to {args.frames}")
    if rep.failed:
        print(f"episode failed: {rep.failure}", file=sys.stderr)
        return 1
    return 0


def cmd_config(args) -> int:
    if args.defaults:
        sys.stdout.write(harness.defaults_yaml())
        return 0
    if args.check:
        suite = harness.load_suite(args.check)
        print(f"{args.check}: {len(suite.scenarios)} scenario(s), seed {suite.seed}, "
              f"config hash {harness.config_hash(suite)[:16]}")
        return 0
    print("nothing to do: pass --defaults or --check FILE", file=sys.stderr)
    return 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gogsim", description=__doc__)
    p.add_argument("--version", action="version", version=f"gogsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a benchmark suite (a YAML file, or 'catalog' for the bundled one)")
    r.add_argument("suite")
    r.add_argument("--out", default="gogsim-out", help="output directory (default: %(default)s)")
    r.add_argument("--seed", type=int, default=None, help="override the suite seed")
    r.add_argument("--frames", action="store_true", help="write rendered frames for every episode")
    r.add_argument("--frame-stride", type=int, default=10, help="render every Nth logged frame")
    r.add_argument("--jobs", type=int, default=1, help="trials to run in parallel")
    r.add_argument("--no-figures", action="store_true", help="skip summary.png")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("score", help="IoU (and WR) of a fold from pre/post mask images")
    s.add_argument("pre", help="pre-fold mask (P5 graymap or PNG)")
    s.add_argument("post", help="post-fold mask")
    s.add_argument("--fold-line", required=True, metavar="PX,PY,NX,NY",
                   help="fold line point and normal (normal points at the moving half), in mask world units; "
                        "write --fold-line=... when the first value is negative")
    s.add_argument("--image", help="gray image of the folded cloth for the wrinkle penalty")
    s.add_argument("--scale", type=float, default=None, help="metres per pixel for masks without a frame header")
    s.add_argument("--threshold", type=float, default=0.5, help="occupied if brighter than this")
    s.add_argument("--margin", type=int, default=3, help="mask erosion before counting wrinkle pixels")
    s.add_argument("--low", type=float, default=0.1, help="Canny low threshold")
    s.add_argument("--high", type=float, default=0.2, help="Canny high threshold")
    s.add_argument("--truth-out", help="write the halved ground-truth mask here (P5)")
    s.set_defaults(func=cmd_score)

    y = sub.add_parser("replay", help="execute a saved trajectory on a settled cloth")
    y.add_argument("trajectory")
    y.add_argument("--scenario", help="scenario file whose cloth, pose and gripper to use")
    y.add_argument("--out", help="write the episode report JSON here")
    y.add_argument("--frames", metavar="DIR", help="render frames into DIR")
    y.add_argument("--frame-stride", type=int, default=10)
    y.set_defaults(func=cmd_replay)

    c = sub.add_parser("config", help="print the scenario schema with defaults, or check a suite file")
    c.add_argument("--defaults", action="store_true")
    c.add_argument("--check", metavar="FILE")
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (harness.ScenarioError, maskio.MaskFormatError, metrics.MetricError, PlanningError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
