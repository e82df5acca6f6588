"""Aligned 20 Hz episodes: action assembly, alignment drivers and persistence.

Episode directory layout::

    episode.json        metadata (format version, source, task, seeds, frames, ...)
    actions.bin         b"EGAC", u64 rows, u64 cols, rows*cols little-endian float64
    frames/original/    PNG per control step
    frames/aligned/     view-aligned PNGs (human episodes)
    frames/mask/        hole masks, 255 = hole (human episodes)
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .errors import AlignError, IoError, LengthMismatch, RangeError, VersionMismatch
from .filters import downsample
from .geometry import RotationSO3, quat_yaw
from .gripper import HandTrack, grasp_state, passthrough_grasp
from .lower import PelvisTrack, align_lower, delta_height
from .recording import HumanRecording, RobotRecording
from .upper import PoseTrack, WristTrack, align_upper, rotation_gate_violations
from .view import (
    external_inpaint,
    fill_holes_nearest,
    gravity_down,
    make_target_pose,
    read_depth,
    read_rgb,
    reproject,
    upsample_depth,
    write_mask,
    write_png,
)

FORMAT_VERSION = 1
EPISODE_FILE = "episode.json"
ACTIONS_FILE = "actions.bin"
ACTIONS_MAGIC = b"EGAC"

ACTION_DIM = 18
ACTION_LAYOUT = (
    "left_dx", "left_dy", "left_dz", "left_rx", "left_ry", "left_rz",
    "right_dx", "right_dy", "right_dz", "right_rx", "right_ry", "right_rz",
    "vx_bin", "vy_bin", "yaw_bin", "grip_left", "grip_right", "delta_height",
)
BIN_COLS = (12, 13, 14)
GRIP_COLS = (15, 16)
DISCRETE_COLS = BIN_COLS + GRIP_COLS
CONTINUOUS_COLS = tuple(i for i in range(ACTION_DIM) if i not in DISCRETE_COLS)
ROTATION_SLICES = (slice(3, 6), slice(9, 12))


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any JSON-serialisable parts (master seed, ids, names)."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") >> 1


def action_issues(actions) -> list:
    """Human-readable invariant violations, one per offending step."""
    a = np.asarray(actions, dtype=float)
    issues = []
    if a.ndim != 2 or a.shape[1] != ACTION_DIM:
        return [f"action matrix has shape {a.shape}, expected (n, {ACTION_DIM})"]
    for i, row in enumerate(a):
        if not np.isfinite(row).all():
            issues.append(f"step {i}: non-finite value")
            continue
        for c in BIN_COLS:
            if row[c] not in (-1.0, 0.0, 1.0):
                issues.append(f"step {i}: {ACTION_LAYOUT[c]}={row[c]:g} not in {{-1, 0, 1}}")
        for c in GRIP_COLS:
            if row[c] not in (0.0, 1.0):
                issues.append(f"step {i}: {ACTION_LAYOUT[c]}={row[c]:g} not in {{0, 1}}")
        for sl in ROTATION_SLICES:
            if np.linalg.norm(row[sl]) > np.pi + 1e-9:
                issues.append(f"step {i}: rotation delta exceeds pi")
    return issues


def assemble_actions(upper, bins, dz, grip) -> np.ndarray:
    """Stack the per-module outputs into ``(n, 18)`` rows in the fixed layout."""
    upper = np.asarray(upper, dtype=float).reshape(-1, 12)
    bins = np.asarray(bins, dtype=float).reshape(-1, 3)
    dz = np.asarray(dz, dtype=float).reshape(-1)
    grip = np.asarray(grip, dtype=float).reshape(-1, 2)
    lengths = {len(upper), len(bins), len(dz), len(grip)}
    if len(lengths) != 1:
        raise LengthMismatch(
            f"module outputs disagree: upper={len(upper)}, bins={len(bins)}, dz={len(dz)}, grip={len(grip)}"
        )
    out = np.concatenate([upper, bins, grip, dz[:, None]], axis=1)
    issues = action_issues(out)
    if issues:
        raise RangeError(issues[0])
    return out


@dataclass(eq=False)
class AlignedEpisode:
    episode_id: str
    source: str
    task: str
    frames: list
    actions: np.ndarray
    seed: int
    config_hash: str
    primitive_speed: dict = field(default_factory=dict)
    original_frames: list = field(default_factory=list)
    mask_frames: list = field(default_factory=list)
    view_offsets: list = field(default_factory=list)
    intrinsics: dict | None = None
    warnings: list = field(default_factory=list)
    tool_version: str = __version__
    # frames not yet on disk: relative path -> uint8 array (written by write_episode)
    images: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(-1, ACTION_DIM)

    def __len__(self):
        return len(self.actions)

    def metadata(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "episode_id": self.episode_id,
            "source": self.source,
            "task": self.task,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "primitive_speed": self.primitive_speed,
            "intrinsics": self.intrinsics,
            "num_frames": len(self.frames),
            "num_actions": len(self.actions),
            "action_layout": list(ACTION_LAYOUT),
            "frames": list(self.frames),
            "original_frames": list(self.original_frames),
            "mask_frames": list(self.mask_frames),
            "view_offsets": list(self.view_offsets),
            "warnings": list(self.warnings),
        }

    def __eq__(self, other):
        if not isinstance(other, AlignedEpisode):
            return NotImplemented
        return self.metadata() == other.metadata() and np.array_equal(self.actions, other.actions)

    def structural_issues(self) -> list:
        issues = []
        if self.source not in ("human", "robot"):
            issues.append(f"source tag {self.source!r} is not 'human' or 'robot'")
        if not self.config_hash:
            issues.append("config hash missing")
        if len(self.actions) != len(self.frames) - 1:
            issues.append(f"{len(self.actions)} actions for {len(self.frames)} frames (expected frames - 1)")
        return issues


# -- persistence ----------------------------------------------------------------

def _write_actions(path: Path, actions: np.ndarray):
    rows, cols = actions.shape
    with open(path, "wb") as fh:
        fh.write(ACTIONS_MAGIC)
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(np.ascontiguousarray(actions, dtype="<f8").tobytes())


def _read_actions(path: Path) -> np.ndarray:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    if len(blob) < 20 or blob[:4] != ACTIONS_MAGIC:
        raise IoError(f"{path}: bad or truncated header")
    rows, cols = struct.unpack("<QQ", blob[4:20])
    expected = 20 + 8 * rows * cols
    if len(blob) != expected:
        raise IoError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f8", offset=20).reshape(rows, cols).astype(np.float64)


def write_episode(e: AlignedEpisode, directory):
    """Persist metadata, actions and any in-memory frames under ``directory``."""
    issues = e.structural_issues()
    if issues:
        raise IoError(f"refusing to write inconsistent episode: {issues[0]}")
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        for rel, img in sorted(e.images.items()):
            p = d / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            if img.dtype == bool:
                write_mask(p, img)
            else:
                write_png(p, img)
        _write_actions(d / ACTIONS_FILE, e.actions)
        (d / EPISODE_FILE).write_text(json.dumps(e.metadata(), indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write episode to {d}: {exc}") from None
    e.images = {}
    return d


def read_episode(directory) -> AlignedEpisode:
    d = Path(directory)
    meta_path = d / EPISODE_FILE
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise IoError(f"{d}: no {EPISODE_FILE}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read {meta_path}: {exc}") from None
    version = meta.get("format_version")
    if not isinstance(version, int):
        raise IoError(f"{meta_path}: missing format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{meta_path}: format version {version}, this tool reads {FORMAT_VERSION}")
    actions = _read_actions(d / ACTIONS_FILE)
    if actions.shape[1] != ACTION_DIM:
        raise IoError(f"{d}: action matrix has {actions.shape[1]} columns, expected {ACTION_DIM}")
    try:
        e = AlignedEpisode(
            episode_id=meta["episode_id"],
            source=meta["source"],
            task=meta["task"],
            frames=list(meta["frames"]),
            actions=actions,
            seed=meta["seed"],
            config_hash=meta["config_hash"],
            primitive_speed=meta.get("primitive_speed", {}),
            original_frames=list(meta.get("original_frames", [])),
            mask_frames=list(meta.get("mask_frames", [])),
            view_offsets=list(meta.get("view_offsets", [])),
            intrinsics=meta.get("intrinsics"),
            warnings=list(meta.get("warnings", [])),
            tool_version=meta.get("tool_version", ""),
        )
    except KeyError as exc:
        raise IoError(f"{meta_path}: missing field {exc}") from None
    if len(e.actions) != len(e.frames) - 1:
        raise IoError(f"{d}: {len(e.actions)} actions for {len(e.frames)} frames")
    return e


def validate_episode(directory) -> tuple:
    """Read an episode and collect every invariant violation.

    Unreadable episodes raise (``IoError`` / ``VersionMismatch``); readable
    ones return ``(episode, issues)`` where ``issues`` is a list of strings.
    """
    d = Path(directory)
    e = read_episode(d)
    issues = e.structural_issues() + action_issues(e.actions)
    if e.source == "human" and e.mask_frames and len(e.mask_frames) != len(e.frames):
        issues.append(f"{len(e.mask_frames)} masks for {len(e.frames)} frames")
    for rel in list(e.frames) + list(e.original_frames) + list(e.mask_frames):
        if not (d / rel).is_file():
            issues.append(f"missing frame file {rel}")
    return e, issues


# -- alignment ------------------------------------------------------------------------

def _frame_path(kind, j):
    return f"frames/{kind}/{j:06d}.png"


def _stash(e_images, out_dir, rel, img):
    """Write straight to disk when an output directory is known, else keep in memory."""
    if out_dir is None:
        e_images[rel] = img
        return
    p = Path(out_dir) / rel
    p.parent.mkdir(parents=True, exist_ok=True)
    if img.dtype == bool:
        write_mask(p, img)
    else:
        write_png(p, img)


def _gate_warnings(actions, cfg):
    warnings = []
    for i in rotation_gate_violations(actions[:, :12], cfg.upper.max_step_rotation):
        warnings.append(f"step {int(i)}: wrist rotation delta >= {cfg.upper.max_step_rotation} rad")
    for i in np.flatnonzero(np.abs(actions[:, 17]) >= cfg.lower.max_dz):
        warnings.append(f"step {int(i)}: |delta_height| >= {cfg.lower.max_dz} m")
    return warnings


def _align_view(rec: HumanRecording, cfg: PipelineConfig, seed: int, picks, images, out_dir):
    vcfg = cfg.view
    aligned, originals, masks, offsets = [], [], [], []
    for j, i in enumerate(picks):
        try:
            rgb = read_rgb(rec.root / rec.rgb_refs[i])
            originals.append(_frame_path("original", j))
            _stash(images, out_dir, originals[-1], rgb)
            if not vcfg.enabled:
                continue
            depth = read_depth(rec.root / rec.depth_refs[i])
            h, w = rgb.shape[:2]
            if depth.shape != (h, w):
                depth = upsample_depth(depth, w, h)
            if rec.depth_scale != 1.0:
                depth = depth.scaled(rec.depth_scale)
            if vcfg.down_mode == "gravity":
                down = gravity_down(RotationSO3(rec.headset.quats[i]))
            else:
                down = (0.0, 1.0, 0.0)
            T = make_target_pose(
                vcfg.base_drop, vcfg.perturb_bound,
                seed=derive_seed(seed, rec.recording_id, "view", j), down=down,
            )
            warped = reproject(rgb, depth, rec.intrinsics, T)
            if vcfg.inpaint == "nearest":
                filled = fill_holes_nearest(warped)
            elif vcfg.inpaint == "external":
                filled = external_inpaint(warped, vcfg.inpaint_cmd, timeout=vcfg.inpaint_timeout)
            else:
                filled = warped.rgb
            aligned.append(_frame_path("aligned", j))
            masks.append(_frame_path("mask", j))
            offsets.append(T.offset)
            _stash(images, out_dir, aligned[-1], filled)
            _stash(images, out_dir, masks[-1], warped.holes)
        except AlignError as exc:
            raise exc.attach(frame=int(i), episode=rec.recording_id)
    return aligned, originals, masks, offsets


def align_human(rec: HumanRecording, cfg: PipelineConfig, seed: int, out_dir=None) -> AlignedEpisode:
    factor = cfg.upper.factor
    n = -(-len(rec) // factor)
    picks = list(range(0, len(rec), factor))

    upper = align_upper(WristTrack(rec.left_wrist, rec.right_wrist, rec.pelvis), cfg.upper)
    lower = align_lower(
        PelvisTrack(rec.pelvis.translations, rec.rate, yaw=quat_yaw(rec.pelvis.quats)), cfg.lower
    )
    grips = []
    for hand in (rec.left_hand, rec.right_hand):
        grips.append(grasp_state(HandTrack(hand, rec.rate, cfg.gripper.chains), cfg.gripper).states)
    grip = np.stack(grips, axis=1)

    m = n - 1
    actions = assemble_actions(upper[:m], lower.bins[:m], lower.dz[:m], grip[:m])

    images = {}
    aligned, originals, masks, offsets = _align_view(rec, cfg, seed, picks, images, out_dir)
    frames = aligned if cfg.view.enabled else originals
    return AlignedEpisode(
        episode_id=rec.recording_id,
        source="human",
        task=rec.task,
        frames=frames,
        actions=actions,
        seed=seed,
        config_hash=cfg.config_hash(),
        primitive_speed=dict(cfg.lower.primitive_speed),
        original_frames=originals,
        mask_frames=masks,
        view_offsets=offsets,
        intrinsics=rec.intrinsics.to_dict(),
        warnings=_gate_warnings(actions, cfg),
        images=images,
    )


def align_robot(rec: RobotRecording, cfg: PipelineConfig, seed: int, out_dir=None) -> AlignedEpisode:
    factor = cfg.upper.factor
    n = -(-len(rec) // factor)
    m = n - 1
    track = WristTrack(rec.left_ee, rec.right_ee, PoseTrack.identity(len(rec)))
    upper = align_upper(track, cfg.upper, calibrate=False)
    bins = downsample(rec.nav, factor, "pick")
    dz = delta_height(rec.base.translations[:, 2], cfg.lower.dz_th, cfg.lower.window, cfg.lower.order, factor)
    grip = np.stack([passthrough_grasp(rec.grip[:, k], factor) for k in range(2)], axis=1)
    actions = assemble_actions(upper[:m], bins[:m], dz[:m], grip[:m])

    images = {}
    frames = []
    for j, i in enumerate(range(0, len(rec), factor)):
        try:
            rgb = read_rgb(rec.root / rec.rgb_refs[i])
        except AlignError as exc:
            raise exc.attach(frame=i, episode=rec.recording_id)
        frames.append(_frame_path("original", j))
        _stash(images, out_dir, frames[-1], rgb)
    return AlignedEpisode(
        episode_id=rec.recording_id,
        source="robot",
        task=rec.task,
        frames=frames,
        actions=actions,
        seed=seed,
        config_hash=cfg.config_hash(),
        primitive_speed=dict(cfg.lower.primitive_speed),
        original_frames=list(frames),
        intrinsics=rec.intrinsics.to_dict(),
        warnings=_gate_warnings(actions, cfg),
        images=images,
    )


def align_episode(rec, config: PipelineConfig | None = None, seed: int | None = None,
                  out_dir=None) -> AlignedEpisode:
    """Run the full alignment for one recording.

    ``seed`` defaults to one derived from the config seed and recording id, so
    the result never depends on which worker or in what order it runs. With
    ``out_dir`` frames are streamed to disk as they are produced; call
    ``write_episode`` with the same directory to finish.
    """
    cfg = config or PipelineConfig()
    if seed is None:
        seed = derive_seed(cfg.seed, rec.recording_id)
    try:
        if isinstance(rec, HumanRecording):
            return align_human(rec, cfg, seed, out_dir)
        if isinstance(rec, RobotRecording):
            return align_robot(rec, cfg, seed, out_dir)
    except AlignError as exc:
        raise exc.attach(episode=rec.recording_id)
    raise TypeError(f"cannot align {type(rec).__name__}")
