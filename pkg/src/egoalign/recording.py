"""Raw 100 Hz capture streams and their on-disk layout.

A recording is a directory::

    recording.json   metadata: source, task, rate, intrinsics, subject, ...
    frames.jsonl     one JSON object per capture frame
    rgb/, depth/     image and depth files referenced by relative path

Human frame keys: ``t``, ``headset``, ``pelvis``, ``left_wrist``,
``right_wrist`` (each ``[tx, ty, tz, qw, qx, qy, qz]``), ``body`` (24 x 3),
``left_hand`` / ``right_hand`` (26 x 3, or ``null`` while the hand is not
tracked), ``rgb``, ``depth``.

Robot frame keys: ``t``, ``base``, ``left_ee``, ``right_ee`` (poses, the
end-effectors already in the base frame), ``nav`` (three ints in {-1, 0, 1}:
forward, lateral, yaw), ``grip`` (two ints in {0, 1}), ``rgb``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DanglingReference, MonotonicityError, SchemaError
from .geometry import CameraIntrinsics
from .upper import PoseTrack

RECORDING_FILE = "recording.json"
FRAMES_FILE = "frames.jsonl"
RECORDING_VERSION = 1
BODY_KEYPOINTS = 24
HAND_KEYPOINTS = 26


@dataclass(eq=False)
class HumanRecording:
    recording_id: str
    task: str
    timestamps: np.ndarray
    headset: PoseTrack
    pelvis: PoseTrack
    left_wrist: PoseTrack
    right_wrist: PoseTrack
    body: np.ndarray  # (N, 24, 3)
    left_hand: np.ndarray  # (N, 26, 3)
    right_hand: np.ndarray  # (N, 26, 3)
    rgb_refs: list
    depth_refs: list
    intrinsics: CameraIntrinsics
    rate: float = 100.0
    depth_scale: float = 1.0
    subject: dict = field(default_factory=dict)
    root: Path | None = None

    source = "human"

    def __len__(self):
        return len(self.timestamps)


@dataclass(eq=False)
class RobotRecording:
    recording_id: str
    task: str
    timestamps: np.ndarray
    base: PoseTrack
    left_ee: PoseTrack
    right_ee: PoseTrack
    nav: np.ndarray  # (N, 3) int
    grip: np.ndarray  # (N, 2) int
    rgb_refs: list
    intrinsics: CameraIntrinsics
    rate: float = 100.0
    root: Path | None = None

    source = "robot"

    def __len__(self):
        return len(self.timestamps)


# -- reading -----------------------------------------------------------------------

def _load_meta(path: Path, source: str) -> dict:
    meta_path = path / RECORDING_FILE
    if not meta_path.exists():
        raise SchemaError(f"{path}: missing {RECORDING_FILE}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{meta_path}: invalid JSON ({exc})") from None
    if not isinstance(meta, dict):
        raise SchemaError(f"{meta_path}: expected an object")
    if meta.get("source") != source:
        raise SchemaError(f"{path}: recording source is {meta.get('source')!r}, expected {source!r}")
    if meta.get("version", RECORDING_VERSION) != RECORDING_VERSION:
        raise SchemaError(f"{path}: unsupported recording version {meta.get('version')!r}")
    for key in ("task", "intrinsics"):
        if key not in meta:
            raise SchemaError(f"{meta_path}: missing field {key!r}")
    try:
        meta["_intrinsics"] = CameraIntrinsics.from_dict(meta["intrinsics"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{meta_path}: bad intrinsics ({exc})") from None
    rate = meta.get("rate", 100.0)
    if not isinstance(rate, (int, float)) or rate <= 0:
        raise SchemaError(f"{meta_path}: bad rate {rate!r}")
    return meta


def _load_frames(path: Path) -> list:
    frames_path = path / FRAMES_FILE
    if not frames_path.exists():
        raise SchemaError(f"{path}: missing {FRAMES_FILE}")
    frames = []
    with open(frames_path) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{frames_path}: line {i + 1} is not JSON ({exc})", frame=i) from None
            if not isinstance(rec, dict):
                raise SchemaError(f"{frames_path}: line {i + 1} is not an object", frame=i)
            frames.append(rec)
    if not frames:
        raise SchemaError(f"{frames_path}: no frames")
    return frames


def _array(frames, key, shape, dtype=float, allow_lost=False):
    """Stack one field over all frames. With ``allow_lost`` a ``null`` entry or
    NaN coordinates mark a lost track instead of an error."""
    out = np.empty((len(frames),) + shape, dtype=dtype)
    for i, fr in enumerate(frames):
        if key not in fr:
            raise SchemaError(f"frame {i}: missing field {key!r}", frame=i)
        if allow_lost and fr[key] is None:
            out[i] = np.nan
            continue
        try:
            a = np.asarray(fr[key], dtype=dtype)
        except (TypeError, ValueError):
            raise SchemaError(f"frame {i}: field {key!r} is not numeric", frame=i) from None
        if a.shape != shape:
            raise SchemaError(f"frame {i}: field {key!r} has shape {a.shape}, expected {shape}", frame=i)
        out[i] = a
    bad_values = np.isinf(out) if allow_lost else ~np.isfinite(out)
    if dtype is float and bad_values.any():
        bad = int(np.argwhere(bad_values.reshape(len(frames), -1))[0, 0])
        raise SchemaError(f"frame {bad}: field {key!r} has non-finite values", frame=bad)
    return out


def _poses(frames, key):
    v = _array(frames, key, (7,))
    norms = np.linalg.norm(v[:, 3:], axis=1)
    if np.any(norms < 1e-6):
        bad = int(np.argmax(norms < 1e-6))
        raise SchemaError(f"frame {bad}: {key!r} quaternion has zero norm", frame=bad)
    return PoseTrack.from_vectors(v)


def _timestamps(frames):
    ts = np.array([_number(fr, "t", i) for i, fr in enumerate(frames)])
    steps = np.diff(ts)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0)) + 1
        raise MonotonicityError(f"frame {bad}: timestamp {ts[bad]} does not increase", frame=bad)
    return ts


def _number(fr, key, i):
    if key not in fr:
        raise SchemaError(f"frame {i}: missing field {key!r}", frame=i)
    v = fr[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"frame {i}: field {key!r} must be a number", frame=i)
    return float(v)


def _refs(frames, key, root: Path):
    refs = []
    for i, fr in enumerate(frames):
        ref = fr.get(key)
        if not isinstance(ref, str) or not ref:
            raise SchemaError(f"frame {i}: field {key!r} must be a relative path", frame=i)
        refs.append(ref)
    for ref in sorted(set(refs)):
        if not (root / ref).is_file():
            i = refs.index(ref)
            raise DanglingReference(f"frame {i}: {key} reference {ref!r} not found", frame=i)
    return refs


def ingest_human(path) -> HumanRecording:
    path = Path(path)
    meta = _load_meta(path, "human")
    frames = _load_frames(path)
    ts = _timestamps(frames)
    rec = HumanRecording(
        recording_id=str(meta.get("id", path.name)),
        task=str(meta["task"]),
        timestamps=ts,
        headset=_poses(frames, "headset"),
        pelvis=_poses(frames, "pelvis"),
        left_wrist=_poses(frames, "left_wrist"),
        right_wrist=_poses(frames, "right_wrist"),
        body=_array(frames, "body", (BODY_KEYPOINTS, 3)),
        left_hand=_array(frames, "left_hand", (HAND_KEYPOINTS, 3), allow_lost=True),
        right_hand=_array(frames, "right_hand", (HAND_KEYPOINTS, 3), allow_lost=True),
        rgb_refs=_refs(frames, "rgb", path),
        depth_refs=_refs(frames, "depth", path),
        intrinsics=meta["_intrinsics"],
        rate=float(meta.get("rate", 100.0)),
        depth_scale=float(meta.get("depth_scale", 1.0)),
        subject=dict(meta.get("subject", {})),
        root=path,
    )
    if not rec.depth_scale > 0:
        raise SchemaError(f"{path}: depth_scale must be positive")
    return rec


def ingest_robot(path) -> RobotRecording:
    path = Path(path)
    meta = _load_meta(path, "robot")
    frames = _load_frames(path)
    ts = _timestamps(frames)
    nav = _array(frames, "nav", (3,), dtype=np.int64)
    grip = _array(frames, "grip", (2,), dtype=np.int64)
    if np.any(np.abs(nav) > 1):
        bad = int(np.argwhere(np.abs(nav) > 1)[0, 0])
        raise SchemaError(f"frame {bad}: navigation command outside {{-1, 0, 1}}", frame=bad)
    if np.any((grip != 0) & (grip != 1)):
        bad = int(np.argwhere((grip != 0) & (grip != 1))[0, 0])
        raise SchemaError(f"frame {bad}: gripper state outside {{0, 1}}", frame=bad)
    return RobotRecording(
        recording_id=str(meta.get("id", path.name)),
        task=str(meta["task"]),
        timestamps=ts,
        base=_poses(frames, "base"),
        left_ee=_poses(frames, "left_ee"),
        right_ee=_poses(frames, "right_ee"),
        nav=nav,
        grip=grip,
        rgb_refs=_refs(frames, "rgb", path),
        intrinsics=meta["_intrinsics"],
        rate=float(meta.get("rate", 100.0)),
        root=path,
    )


def ingest(path):
    """Dispatch on the ``source`` field of ``recording.json``."""
    path = Path(path)
    try:
        source = json.loads((path / RECORDING_FILE).read_text()).get("source")
    except (OSError, json.JSONDecodeError, AttributeError):
        source = None
    if source == "robot":
        return ingest_robot(path)
    if source == "human":
        return ingest_human(path)
    raise SchemaError(f"{path}: cannot determine recording source")


# -- writing (synthetic data, converters) -------------------------------------------------

def _meta_common(rec, source):
    return {
        "version": RECORDING_VERSION,
        "source": source,
        "id": rec.recording_id,
        "task": rec.task,
        "rate": rec.rate,
        "intrinsics": rec.intrinsics.to_dict(),
    }


def _as_list(a):
    return np.asarray(a, dtype=float).tolist()


def write_recording(rec, path):
    """Write metadata and the frame stream; image/depth files must already be in place."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if isinstance(rec, HumanRecording):
        meta = _meta_common(rec, "human")
        meta["depth_scale"] = rec.depth_scale
        meta["subject"] = rec.subject
        columns = {
            "headset": rec.headset.as_vectors(),
            "pelvis": rec.pelvis.as_vectors(),
            "left_wrist": rec.left_wrist.as_vectors(),
            "right_wrist": rec.right_wrist.as_vectors(),
            "body": rec.body,
            "left_hand": rec.left_hand,
            "right_hand": rec.right_hand,
        }
        refs = {"rgb": rec.rgb_refs, "depth": rec.depth_refs}
    else:
        meta = _meta_common(rec, "robot")
        columns = {
            "base": rec.base.as_vectors(),
            "left_ee": rec.left_ee.as_vectors(),
            "right_ee": rec.right_ee.as_vectors(),
        }
        refs = {"rgb": rec.rgb_refs}
    (path / RECORDING_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(path / FRAMES_FILE, "w") as fh:
        for i, t in enumerate(rec.timestamps):
            fr = {"t": float(t)}
            for key, arr in columns.items():
                row = arr[i]
                fr[key] = None if key.endswith("_hand") and np.isnan(row).all() else _as_list(row)
            if isinstance(rec, RobotRecording):
                fr["nav"] = [int(v) for v in rec.nav[i]]
                fr["grip"] = [int(v) for v in rec.grip[i]]
            for key, lst in refs.items():
                fr[key] = lst[i]
            fh.write(json.dumps(fr, separators=(",", ":")) + "\n")
