"""Lower-body action alignment: pelvis trajectory to discrete locomotion bins.

The robot is driven by constant-velocity primitives (forward/backward,
left/right, turn, stand/squat). A human pelvis track is turned into the same
alphabet: smooth, estimate heading, project velocities into the body frame,
average down to the control rate and threshold each channel to {-1, 0, +1}.
A continuous dead-banded height delta rides alongside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import LowerConfig
from .errors import InsufficientDuration, InvalidThreshold, LengthMismatch, TooShort
from .filters import downsample, savgol_smooth


def wrap_angle(a):
    """Map angles to ``[-pi, pi)``."""
    return (np.asarray(a, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class PelvisTrack:
    positions: np.ndarray
    rate: float = 100.0
    yaw: np.ndarray | None = None
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if not np.isfinite(p).all():
            raise ValueError("pelvis positions must be finite")
        object.__setattr__(self, "positions", p)
        if self.yaw is not None:
            yaw = np.asarray(self.yaw, dtype=float).reshape(-1)
            if len(yaw) != len(p):
                raise LengthMismatch(f"{len(yaw)} yaw samples for {len(p)} positions")
            object.__setattr__(self, "yaw", yaw)
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=float)
            if len(ts) != len(p):
                raise LengthMismatch(f"{len(ts)} timestamps for {len(p)} positions")
            if np.any(np.diff(ts) <= 0):
                raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class Heading:
    theta: np.ndarray
    reverse: np.ndarray  # frames where the pelvis moves against the heading

    def __len__(self):
        return len(self.theta)


@dataclass(frozen=True, eq=False)
class LowerActions:
    bins: np.ndarray  # (n, 3) int: vx, vy, yaw
    dz: np.ndarray  # (n,)
    velocities: np.ndarray  # (n, 3) window-averaged v_fwd, v_lat, yaw_rate
    heading: Heading  # full-rate, diagnostic

    def __len__(self):
        return len(self.bins)


def estimate_heading(xy, eps_still: float = 1e-3, initial: float | None = None) -> Heading:
    """Heading from centered-difference displacement with a continuity rule.

    Frames moving less than ``eps_still`` meters per frame hold the previous
    heading. A jump of more than 90 degrees is read as walking backwards: the
    heading is flipped by pi and the frame is flagged ``reverse``. Still
    frames before the first motion take the first moving heading (or
    ``initial`` / 0 when the track never moves).
    """
    xy = np.asarray(xy, dtype=float)[:, :2]
    n = len(xy)
    if n < 3:
        raise TooShort(f"heading estimation needs at least 3 samples, got {n}")
    disp = np.gradient(xy, axis=0)
    moving = np.hypot(disp[:, 0], disp[:, 1]) >= eps_still
    raw = np.arctan2(disp[:, 1], disp[:, 0])

    theta = np.empty(n)
    reverse = np.zeros(n, dtype=bool)
    prev = None
    prev_rev = False
    first_moving = None
    for t in range(n):
        if moving[t]:
            if prev is None:
                cur, rev = raw[t], False
                first_moving = t
            elif abs(wrap_angle(raw[t] - prev)) > np.pi / 2:
                cur, rev = float(wrap_angle(raw[t] + np.pi)), True
            else:
                cur, rev = raw[t], False
            prev, prev_rev = cur, rev
        elif prev is None:
            continue
        theta[t] = prev
        reverse[t] = prev_rev

    if first_moving is None:
        theta[:] = 0.0 if initial is None else initial
    elif first_moving > 0:
        theta[:first_moving] = theta[first_moving] if initial is None else initial
    return Heading(theta, reverse)


def heading_from_yaw(yaw) -> Heading:
    yaw = np.unwrap(np.asarray(yaw, dtype=float))
    return Heading(yaw, np.zeros(len(yaw), dtype=bool))


def body_velocities(xy, heading: Heading, rate: float = 100.0) -> np.ndarray:
    """Forward, lateral and yaw-rate series ``(N, 3)`` at the input rate.

    World velocities are rotated into the heading frame. Backwards walking
    needs no special case: a flipped heading already points against the
    motion, so the forward component comes out negative.
    """
    xy = np.asarray(xy, dtype=float)[:, :2]
    theta = np.asarray(heading.theta, dtype=float)
    if len(theta) != len(xy):
        raise LengthMismatch(f"heading has {len(theta)} samples, track has {len(xy)}")
    vel = np.gradient(xy, axis=0) * rate
    c, s = np.cos(theta), np.sin(theta)
    v_fwd = c * vel[:, 0] + s * vel[:, 1]
    v_lat = -s * vel[:, 0] + c * vel[:, 1]
    yaw_rate = np.empty(len(theta))
    if len(theta) > 1:
        yaw_rate[1:] = wrap_angle(np.diff(theta)) * rate
        yaw_rate[0] = yaw_rate[1]
    else:
        yaw_rate[:] = 0.0
    return np.stack([v_fwd, v_lat, yaw_rate], axis=1)


def quantize_commands(v, thresholds=(0.05, 0.05, 0.1)) -> np.ndarray:
    """Three-way bins per channel: ``sign(v)`` where ``|v| >= threshold``, else 0."""
    th = np.asarray(thresholds, dtype=float)
    if th.shape != (3,) or not np.all(th > 0):
        raise InvalidThreshold(f"need three positive thresholds, got {thresholds!r}")
    v = np.asarray(v, dtype=float).reshape(-1, 3)
    return np.where(np.abs(v) >= th, np.sign(v), 0.0).astype(np.int64)


def delta_height(z, dz_th: float = 0.0025, window=11, order=3, factor=5) -> np.ndarray:
    """Dead-banded per-step height change at the control rate; first entry is 0."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if len(z) < 2:
        raise TooShort(f"delta height needs at least 2 samples, got {len(z)}")
    if not dz_th > 0:
        raise InvalidThreshold(f"dz threshold must be positive, got {dz_th}")
    z_ds = downsample(savgol_smooth(z, window, order), factor, "pick")
    dz = np.zeros(len(z_ds))
    dz[1:] = np.diff(z_ds)
    dz[np.abs(dz) < dz_th] = 0.0
    return dz


def height_primitive(dz) -> np.ndarray:
    """Ternary stand(+1)/hold(0)/squat(-1) label derived from ``dz`` (logging only)."""
    return np.sign(np.asarray(dz)).astype(np.int64)


def align_lower(track: PelvisTrack, config: LowerConfig | None = None) -> LowerActions:
    """Full-rate pelvis track to control-rate locomotion bins plus height deltas."""
    cfg = config or LowerConfig()
    n = len(track)
    if n < cfg.min_frames:
        raise InsufficientDuration(f"{n} frames < required {cfg.min_frames}")
    pos = savgol_smooth(track.positions, cfg.window, cfg.order)
    if cfg.heading_source == "yaw":
        if track.yaw is None:
            raise ValueError("heading_source='yaw' needs a pelvis yaw channel")
        heading = heading_from_yaw(savgol_smooth(np.unwrap(track.yaw), cfg.window, cfg.order))
    else:
        heading = estimate_heading(pos[:, :2], cfg.eps_still)
    vel = body_velocities(pos[:, :2], heading, track.rate)
    vel_ds = downsample(vel, cfg.factor, "window_average")
    bins = quantize_commands(vel_ds, (cfg.vx_th, cfg.vy_th, cfg.yaw_th))
    dz = delta_height(track.positions[:, 2], cfg.dz_th, cfg.window, cfg.order, cfg.factor)
    return LowerActions(bins, dz, vel_ds, heading)


def integrate_commands(bins, linear_speed, yaw_speed, dt=0.05, start=(0.0, 0.0, 0.0)):
    """Dead-reckon planar pose ``(x, y, yaw)`` from bins run at constant primitive speeds."""
    x, y, yaw = start
    path = [(x, y, yaw)]
    for vx, vy, wz in np.asarray(bins).reshape(-1, 3):
        c, s = np.cos(yaw), np.sin(yaw)
        x += (c * vx - s * vy) * linear_speed * dt
        y += (s * vx + c * vy) * linear_speed * dt
        yaw += wz * yaw_speed * dt
        path.append((x, y, yaw))
    return np.array(path)
