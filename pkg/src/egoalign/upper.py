"""Upper-body action alignment: wrist tracks to 12-dim delta end-effector actions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import UpperConfig
from .errors import InsufficientDuration, LengthMismatch, TooShort
from .filters import downsample, savgol_smooth, so3_smooth
from .geometry import (
    PoseSE3,
    RotationSO3,
    compose_arrays,
    quat_canonical,
    quat_exp,
    quat_log,
    quat_multiply,
    relative_arrays,
)


@dataclass(frozen=True, eq=False)
class PoseTrack:
    """A pose per frame: translations ``(N, 3)`` and quaternions ``(N, 4)``."""

    translations: np.ndarray
    quats: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        q = quat_canonical(np.asarray(self.quats, dtype=float).reshape(-1, 4))
        if len(t) != len(q):
            raise LengthMismatch(f"{len(t)} translations vs {len(q)} rotations")
        object.__setattr__(self, "translations", t)
        object.__setattr__(self, "quats", q)

    @classmethod
    def from_poses(cls, poses):
        poses = list(poses)
        return cls(
            np.array([p.translation for p in poses]).reshape(-1, 3),
            np.array([p.rotation.q for p in poses]).reshape(-1, 4),
        )

    @classmethod
    def from_vectors(cls, v):
        """From ``(N, 7)`` rows of ``[tx, ty, tz, qw, qx, qy, qz]``."""
        v = np.asarray(v, dtype=float).reshape(-1, 7)
        return cls(v[:, :3], v[:, 3:])

    @classmethod
    def identity(cls, n):
        q = np.zeros((n, 4))
        q[:, 0] = 1.0
        return cls(np.zeros((n, 3)), q)

    def as_vectors(self):
        return np.concatenate([self.translations, self.quats], axis=1)

    def transformed(self, pose: PoseSE3):
        """Left-multiply every pose by ``pose`` (re-express in another world frame)."""
        t, q = compose_arrays(pose.translation, pose.rotation.q, self.translations, self.quats)
        return PoseTrack(t, q)

    def __len__(self):
        return len(self.translations)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return PoseTrack(self.translations[i], self.quats[i])
        return PoseSE3(self.translations[i], RotationSO3(self.quats[i]))


@dataclass(frozen=True, eq=False)
class WristTrack:
    """World-frame wrist poses and the frame they are expressed against.

    ``pelvis`` is the human pelvis, or the robot base (identity when the log
    already stores end-effector poses in the base frame).
    """

    left: PoseTrack
    right: PoseTrack
    pelvis: PoseTrack
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.pelvis)
        if len(self.left) != n or len(self.right) != n:
            raise LengthMismatch(
                f"wrist/pelvis lengths differ: {len(self.left)}, {len(self.right)}, {n}"
            )
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=float)
            if len(ts) != n:
                raise LengthMismatch(f"{len(ts)} timestamps for {n} frames")
            if np.any(np.diff(ts) <= 0):
                raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.pelvis)


def to_pelvis_frame(pelvis: PoseTrack, wrist: PoseTrack, calibration=None) -> PoseTrack:
    """Express every wrist pose relative to the pelvis pose of the same frame.

    ``calibration`` is an optional wrist-local rotation (quaternion) applied to
    the wrist before re-expression.
    """
    if len(pelvis) != len(wrist):
        raise LengthMismatch(f"pelvis has {len(pelvis)} frames, wrist has {len(wrist)}")
    wq = wrist.quats
    if calibration is not None:
        wq = quat_multiply(wq, np.asarray(calibration, dtype=float))
    t, q = relative_arrays(pelvis.translations, pelvis.quats, wrist.translations, wq)
    return PoseTrack(t, q)


def compute_delta_ee(poses: PoseTrack) -> np.ndarray:
    """Per-step ``[dtx, dty, dtz, drx, dry, drz]`` between consecutive poses.

    The translation delta lives in the earlier pose's frame and the rotation
    delta is the axis-angle of the relative rotation. Shape ``(N - 1, 6)``.
    """
    if len(poses) < 2:
        raise TooShort(f"need at least 2 poses for a delta, got {len(poses)}")
    t, q = relative_arrays(
        poses.translations[:-1], poses.quats[:-1], poses.translations[1:], poses.quats[1:]
    )
    return np.concatenate([t, quat_log(q)], axis=1)


def integrate_deltas(start: PoseSE3, deltas) -> PoseTrack:
    """Left-fold the deltas onto ``start``; inverse of ``compute_delta_ee``."""
    deltas = np.asarray(deltas, dtype=float).reshape(-1, 6)
    t = [np.asarray(start.translation)]
    q = [start.rotation.q]
    for d in deltas:
        nt, nq = compose_arrays(t[-1], q[-1], d[:3], quat_exp(d[3:]))
        t.append(nt)
        q.append(nq)
    return PoseTrack(np.array(t), np.array(q))


def smooth_and_downsample(poses: PoseTrack, window=11, order=3, factor=5) -> PoseTrack:
    """SG on translations, tangent-space SG on rotations, then pick every ``factor``-th."""
    t = savgol_smooth(poses.translations, window, order)
    q = so3_smooth(poses.quats, window, order)
    return PoseTrack(downsample(t, factor, "pick"), q[::factor])


def align_upper(track: WristTrack, config: UpperConfig | None = None, *, calibrate=True) -> np.ndarray:
    """Wrist track at 100 Hz to a ``(ceil(N / factor) - 1, 12)`` action array.

    Columns: left ``[dt(3), dr(3)]`` then right ``[dt(3), dr(3)]``. Robot
    logs pass ``calibrate=False`` since their end-effector frames already
    match the robot.
    """
    cfg = config or UpperConfig()
    n = len(track)
    if n < cfg.min_frames:
        raise InsufficientDuration(f"{n} frames < required {cfg.min_frames}")
    out = []
    for wrist, calib in ((track.left, cfg.calibration_left), (track.right, cfg.calibration_right)):
        rel = to_pelvis_frame(track.pelvis, wrist, calib if calibrate else None)
        ds = smooth_and_downsample(rel, cfg.window, cfg.order, cfg.factor)
        out.append(compute_delta_ee(ds))
    return np.concatenate(out, axis=1)


def rotation_gate_violations(actions, limit=0.5):
    """Indices of steps whose per-arm rotation delta reaches ``limit`` radians."""
    actions = np.asarray(actions, dtype=float)
    left = np.linalg.norm(actions[:, 3:6], axis=1)
    right = np.linalg.norm(actions[:, 9:12], axis=1)
    return np.flatnonzero((left >= limit) | (right >= limit) | ~np.isfinite(actions).all(axis=1))
