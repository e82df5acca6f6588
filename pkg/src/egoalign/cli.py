"""``egoalign`` command line: batch alignment, reprojection, manifests, validation.

Every subcommand prints one JSON record per processed item on stdout.
Exit codes: 0 success, 1 data or pipeline error, 2 usage or environment error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import PipelineConfig
from .episode import EPISODE_FILE, align_episode, derive_seed, read_episode, validate_episode, write_episode
from .errors import AlignError, ConfigError, IoError, SchemaError
from .geometry import CameraIntrinsics
from .manifest import build_manifest, parse_ratio, write_manifest
from .recording import RECORDING_FILE, ingest, ingest_human, ingest_robot
from .view import (
    external_inpaint,
    fill_holes_nearest,
    make_target_pose,
    read_depth,
    read_rgb,
    reproject,
    upsample_depth,
    write_mask,
    write_png,
)

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(record, sink):
    line = json.dumps(record, sort_keys=True)
    print(line)
    if sink is not None:
        sink.write(line + "\n")


def _open_report(path):
    return open(path, "w") if path else contextlib.nullcontext()


def _load_config(path, seed=None):
    cfg = PipelineConfig.load(path) if path else PipelineConfig()
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def _error_record(exc):
    rec = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, AlignError) and exc.frame is not None:
        rec["frame"] = exc.frame
    return rec


# -- align ---------------------------------------------------------------------------------

def find_recordings(root: Path) -> list:
    if (root / RECORDING_FILE).is_file():
        return [root]
    return sorted(p.parent for p in root.rglob(RECORDING_FILE))


def _align_one(rec_path, source, cfg_dict, out_root):
    """Worker: ingest, align and write one recording; returns a report record."""
    cfg = PipelineConfig.from_dict(cfg_dict)
    rec_path = Path(rec_path)
    report = {"input": str(rec_path), "episode": rec_path.name, "status": "ok"}
    tmp = None
    try:
        reader = {"human": ingest_human, "robot": ingest_robot}.get(source, ingest)
        rec = reader(rec_path)
        report["episode"] = rec.recording_id
        final = Path(out_root) / rec.recording_id
        tmp = final.with_name(final.name + ".partial")
        shutil.rmtree(tmp, ignore_errors=True)
        e = align_episode(rec, cfg, out_dir=tmp)
        write_episode(e, tmp)
        shutil.rmtree(final, ignore_errors=True)
        tmp.rename(final)
        report.update(source=e.source, output=str(final), frames=len(e.frames), actions=len(e.actions),
                      seed=e.seed, warnings=e.warnings)
    except (AlignError, OSError, ValueError) as exc:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)
        report.update(status="error", error=_error_record(exc))
    return report


def cmd_align(args) -> int:
    root = Path(args.input)
    if not root.is_dir():
        raise UsageError(f"input directory {root} does not exist")
    cfg = _load_config(args.config, args.seed)
    recordings = find_recordings(root)
    if not recordings:
        raise UsageError(f"no recordings ({RECORDING_FILE}) under {root}")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    jobs = max(1, int(args.jobs))
    work = [(str(p), args.source, cfg.to_dict(), str(out)) for p in recordings]
    if jobs == 1:
        reports = [_align_one(*w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_align_one, *zip(*work)))
    failed = 0
    with _open_report(args.report) as sink:
        for r in reports:
            failed += r["status"] != "ok"
            _emit(r, sink)
    return EXIT_DATA if failed else EXIT_OK


# -- reproject -----------------------------------------------------------------------------

def cmd_reproject(args) -> int:
    root = Path(args.input)
    if not root.is_dir():
        raise UsageError(f"input directory {root} does not exist")
    try:
        K = CameraIntrinsics.from_dict(json.loads((root / "intrinsics.json").read_text()))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read {root / 'intrinsics.json'}: {exc}") from None
    frames = sorted((root / "rgb").glob("*.png"))
    if not frames:
        raise UsageError(f"no RGB frames under {root / 'rgb'}")
    if args.drop < 0 or args.perturb < 0:
        raise UsageError("--drop and --perturb must be >= 0")
    out = Path(args.output)
    subdirs = ["warped", "mask"] + (["filled"] if args.fill != "none" or args.inpaint_cmd else [])
    for sub in subdirs:
        (out / sub).mkdir(parents=True, exist_ok=True)

    failed = 0
    with _open_report(args.report) as sink:
        for rgb_path in frames:
            stem = rgb_path.stem
            record = {"frame": stem, "status": "ok"}
            try:
                rgb = read_rgb(rgb_path)
                depth = read_depth(root / "depth" / f"{stem}.egdp")
                h, w = rgb.shape[:2]
                if depth.shape != (h, w):
                    depth = upsample_depth(depth, w, h)
                if args.depth_scale != 1.0:
                    depth = depth.scaled(args.depth_scale)
                T = make_target_pose(args.drop, args.perturb, seed=derive_seed(args.seed, "reproject", stem))
                warped = reproject(rgb, depth, K, T)
                write_png(out / "warped" / f"{stem}.png", warped.rgb)
                write_mask(out / "mask" / f"{stem}.png", warped.holes)
                if args.inpaint_cmd:
                    filled = external_inpaint(warped, args.inpaint_cmd)
                elif args.fill == "nearest":
                    filled = fill_holes_nearest(warped)
                else:
                    filled = None
                if filled is not None:
                    write_png(out / "filled" / f"{stem}.png", filled)
                record.update(drop=T.drop, offset=T.offset, holes=int(warped.holes.sum()))
            except (AlignError, OSError) as exc:
                failed += 1
                record.update(status="error", error=_error_record(exc))
            _emit(record, sink)
    return EXIT_DATA if failed else EXIT_OK


# -- manifest ------------------------------------------------------------------------------

def _episode_pool(root, source):
    """``(episode_id, n_samples)`` for every episode directory under ``root``."""
    root = Path(root)
    if not root.is_dir():
        return []
    pool = []
    for meta in sorted(root.rglob(EPISODE_FILE)):
        e = read_episode(meta.parent)
        if e.source != source:
            raise SchemaError(f"{meta.parent}: {e.source} episode in the {source} pool")
        pool.append((e.episode_id, len(e.actions)))
    return pool


def cmd_manifest(args) -> int:
    cfg = _load_config(args.config)
    mcfg = cfg.manifest
    ratio = parse_ratio(args.ratio) if args.ratio else tuple(mcfg.ratio)
    batch = args.batch if args.batch is not None else mcfg.batch_size
    steps = args.steps if args.steps is not None else mcfg.steps
    seed = args.seed if args.seed is not None else cfg.seed
    if batch < 1 or steps < 0:
        raise UsageError("--batch must be >= 1 and --steps >= 0")
    robot = _episode_pool(args.robot, "robot") if args.robot else []
    human = _episode_pool(args.human, "human") if args.human else []
    m = build_manifest(robot, human, ratio, batch, steps, seed, args.human_frames or mcfg.human_frames)
    write_manifest(m, args.out)
    _emit({"out": str(args.out), "batches": m.n_batches, "robot_per_batch": int(m.robot.shape[1]),
           "human_per_batch": int(m.human.shape[1]), "robot_episodes": len(robot),
           "human_episodes": len(human)}, None)
    return EXIT_OK


# -- validate ------------------------------------------------------------------------------

def cmd_validate(args) -> int:
    d = Path(args.episode)
    try:
        e, issues = validate_episode(d)
    except (IoError, AlignError) as exc:
        _emit({"episode": str(d), "ok": False, "readable": False, "error": _error_record(exc)}, None)
        return EXIT_USAGE
    _emit({"episode": e.episode_id, "ok": not issues, "readable": True, "issues": issues,
           "actions": len(e.actions)}, None)
    return EXIT_DATA if issues else EXIT_OK


# -- synth ---------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synthetic import make_corpus

    truth = make_corpus(args.output, args.human, args.robot, args.seed)
    for rid, traj in sorted(truth.items()):
        _emit({"recording": rid, "frames": len(traj)}, None)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egoalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="align raw recordings into 20 Hz episodes")
    p.add_argument("--input", required=True, help="recording directory or a tree of them")
    p.add_argument("--output", required=True, help="where episode directories are written")
    p.add_argument("--source", choices=("human", "robot"), help="force the recording type")
    p.add_argument("--config", help="JSON pipeline config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--report", help="also write the JSONL report here")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("reproject", help="warp RGB-D frames to a lower viewpoint")
    p.add_argument("--input", required=True, help="directory with intrinsics.json, rgb/*.png, depth/*.egdp")
    p.add_argument("--output", required=True)
    p.add_argument("--drop", type=float, default=0.25, help="nominal camera drop in meters")
    p.add_argument("--perturb", type=float, default=0.05, help="uniform drop noise bound in meters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth-scale", type=float, default=1.0, help="multiplier applied to stored depth")
    fill = p.add_mutually_exclusive_group()
    fill.add_argument("--inpaint-cmd", help="external inpainter, with {rgb_in} {mask_in} {rgb_out}")
    fill.add_argument("--fill", choices=("nearest", "none"), default="none")
    p.add_argument("--report")
    p.set_defaults(func=cmd_reproject)

    p = sub.add_parser("manifest", help="write a robot:human co-training sampling manifest")
    p.add_argument("--robot", help="directory of robot episodes")
    p.add_argument("--human", help="directory of human episodes")
    p.add_argument("--ratio", help="robot:human, e.g. 1:2")
    p.add_argument("--batch", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--human-frames", choices=("aligned", "original"))
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("validate", help="check an episode directory against its invariants")
    p.add_argument("--episode", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="generate a scripted synthetic corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--human", type=int, default=10)
    p.add_argument("--robot", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"egoalign {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AlignError as exc:
        print(f"egoalign {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
