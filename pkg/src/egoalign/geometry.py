"""Rigid-body math on SO(3)/SE(3) and the pinhole camera model.

Quaternions are stored as ``(w, x, y, z)`` with ``w >= 0``. Every function
in the ``quat_*`` family broadcasts over leading axes, so the same code path
serves single poses and whole trajectories.

Camera frame convention: x right, y down, z forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth

# below this rotation angle exp/log use their Taylor expansions
SMALL_ANGLE = 1e-7


def _norm(v):
    # np.linalg.norm carries noticeable per-call overhead on tiny arrays
    return np.sqrt((v * v).sum(axis=-1))


def _cross(a, b):
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def quat_canonical(q):
    """Normalize and flip onto the ``w >= 0`` hemisphere."""
    q = np.asarray(q, dtype=float)
    q = q / _norm(q)[..., None]
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_multiply(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q, v):
    """Rotate vectors ``v`` (..., 3) by unit quaternions ``q`` (..., 4)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    uv = _cross(u, v)
    return v + 2.0 * w * uv + 2.0 * _cross(u, uv)


def quat_log(q):
    """Axis-angle vector of each rotation, norm in ``[0, pi]``."""
    q = quat_canonical(q)
    w = q[..., 0]
    v = q[..., 1:]
    s = _norm(v)
    # angle ~ 2 s near identity
    small = s < 0.5 * SMALL_ANGLE
    safe_s = np.where(small, 1.0, s)
    safe_w = np.where(small, w, 1.0)
    scale = np.where(
        small,
        2.0 / safe_w * (1.0 - s * s / (3.0 * safe_w * safe_w)),
        2.0 * np.arctan2(s, w) / safe_s,
    )
    return v * scale[..., None]


def quat_exp(phi):
    phi = np.asarray(phi, dtype=float)
    theta = _norm(phi)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(0.5 * theta) / safe)
    w = np.where(small, 1.0 - theta * theta / 8.0, np.cos(0.5 * theta))
    q = np.concatenate([w[..., None], phi * k[..., None]], axis=-1)
    return quat_canonical(q)


def quat_angle(q):
    """Rotation angle in ``[0, pi]``."""
    q = np.asarray(q, dtype=float)
    s = _norm(q[..., 1:])
    return 2.0 * np.arctan2(s, np.abs(q[..., 0]))


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def quat_from_matrix(m):
    """Shepperd's method; picks the numerically largest pivot per matrix."""
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    out = np.empty((m.shape[0], 4))
    for i, r in enumerate(m):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            out[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            out[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            out[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            out[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return quat_canonical(out).reshape(batch + (4,))


def quat_from_yaw(yaw):
    """Rotation about +z by ``yaw`` radians."""
    yaw = np.asarray(yaw, dtype=float)
    zeros = np.zeros_like(yaw)
    return quat_canonical(np.stack([np.cos(0.5 * yaw), zeros, zeros, np.sin(0.5 * yaw)], axis=-1))


def quat_yaw(q):
    """Heading about +z of each rotation (ZYX yaw)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def hemisphere_align(q):
    """Flip signs so consecutive quaternions have non-negative dot products."""
    q = np.array(q, dtype=float)
    for i in range(1, len(q)):
        if np.dot(q[i - 1], q[i]) < 0.0:
            q[i] = -q[i]
    return q


# -- pose arrays: translations (..., 3) and quaternions (..., 4) ---------------

def compose_arrays(ta, qa, tb, qb):
    """``A ∘ B`` for broadcastable stacks of poses."""
    t = np.asarray(ta, dtype=float) + quat_rotate(qa, tb)
    return t, quat_canonical(quat_multiply(qa, qb))


def inverse_arrays(t, q):
    qi = quat_conjugate(quat_canonical(q))
    return -quat_rotate(qi, t), qi


def relative_arrays(ta, qa, tb, qb):
    """``inverse(A) ∘ B``: pose of B expressed in A's frame."""
    qai = quat_conjugate(quat_canonical(qa))
    t = quat_rotate(qai, np.asarray(tb, dtype=float) - np.asarray(ta, dtype=float))
    return t, quat_canonical(quat_multiply(qai, qb))


# -- value types ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RotationSO3:
    """Unit quaternion ``(w, x, y, z)``, stored with ``w >= 0``."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        q = quat_canonical(np.asarray(self.q, dtype=float).reshape(4))
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def _wrap(cls, q):
        # q is already unit with w >= 0; skip the second normalization
        r = object.__new__(cls)
        q = np.array(q, dtype=float)
        q.setflags(write=False)
        object.__setattr__(r, "q", q)
        return r

    @classmethod
    def from_rotvec(cls, phi):
        return cls(quat_exp(phi))

    @classmethod
    def from_matrix(cls, m):
        return cls(quat_from_matrix(m))

    @classmethod
    def about_z(cls, angle):
        return cls(quat_from_yaw(angle))

    def as_matrix(self):
        return quat_to_matrix(self.q)

    @property
    def angle(self):
        return float(quat_angle(self.q))

    def __mul__(self, other):
        return RotationSO3(quat_multiply(self.q, other.q))

    def inverse(self):
        return RotationSO3(quat_conjugate(self.q))

    def apply(self, v):
        return quat_rotate(self.q, v)

    def __eq__(self, other):
        return isinstance(other, RotationSO3) and np.array_equal(self.q, other.q)

    def __repr__(self):
        w, x, y, z = self.q
        return f"RotationSO3(w={w:.6g}, x={x:.6g}, y={y:.6g}, z={z:.6g})"


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform: translation in meters plus a rotation."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: RotationSO3 = field(default_factory=RotationSO3.identity)

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)
        if not isinstance(self.rotation, RotationSO3):
            object.__setattr__(self, "rotation", RotationSO3(self.rotation))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_translation(cls, x, y, z):
        return cls(np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], RotationSO3.from_matrix(m[:3, :3]))

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def as_vector(self):
        """``[tx, ty, tz, qw, qx, qy, qz]``."""
        return np.concatenate([self.translation, self.rotation.q])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[:3], RotationSO3(v[3:7]))

    def apply(self, p):
        return self.rotation.apply(p) + self.translation

    def __matmul__(self, other):
        return pose_compose(self, other)

    def __eq__(self, other):
        return (
            isinstance(other, PoseSE3)
            and np.array_equal(self.translation, other.translation)
            and self.rotation == other.rotation
        )

    def __repr__(self):
        return f"PoseSE3(t={np.round(self.translation, 6).tolist()}, {self.rotation!r})"


def so3_log(r: RotationSO3) -> np.ndarray:
    return quat_log(r.q)


def so3_exp(phi) -> RotationSO3:
    return RotationSO3._wrap(quat_exp(np.asarray(phi, dtype=float).reshape(3)))


def pose_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    t, q = compose_arrays(a.translation, a.rotation.q, b.translation, b.rotation.q)
    return PoseSE3(t, RotationSO3._wrap(q))


def pose_inverse(a: PoseSE3) -> PoseSE3:
    t, q = inverse_arrays(a.translation, a.rotation.q)
    return PoseSE3(t, RotationSO3._wrap(q))


def relative_pose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """``inverse(a) ∘ b``."""
    t, q = relative_arrays(a.translation, a.rotation.q, b.translation, b.rotation.q)
    return PoseSE3(t, RotationSO3._wrap(q))


def rotation_distance(a: RotationSO3, b: RotationSO3) -> float:
    """Geodesic angle between two rotations (radians)."""
    return float(quat_angle(quat_multiply(quat_conjugate(a.q), b.q)))


# -- camera ---------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )


def project_points(K: CameraIntrinsics, points):
    """Vectorized projection of (..., 3) camera-frame points.

    Returns ``(u, v, z)`` arrays. Raises NonPositiveDepth if any z <= 0; cull first.
    """
    p = np.asarray(points, dtype=float)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepth("point at or behind the camera plane (z <= 0)")
    u = K.fx * (p[..., 0] / z) + K.cx
    v = K.fy * (p[..., 1] / z) + K.cy
    return u, v, z


def unproject_pixels(K: CameraIntrinsics, u, v, depth):
    """Inverse of ``project_points`` for z-depth values; returns (..., 3)."""
    d = np.asarray(depth, dtype=float)
    if np.any(~(d > 0)):
        raise NonPositiveDepth("depth must be positive")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x = (u - K.cx) / K.fx * d
    y = (v - K.cy) / K.fy * d
    return np.stack(np.broadcast_arrays(x, y, d), axis=-1)


def project(K: CameraIntrinsics, p):
    u, v, z = project_points(K, p)
    return float(u), float(v), float(z)


def unproject(K: CameraIntrinsics, u, v, depth):
    return unproject_pixels(K, u, v, depth)
