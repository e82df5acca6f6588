"""Binary grasp state from hand keypoints via finger curvature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_FINGER_CHAINS, GripperConfig
from .errors import DegenerateFinger, InvalidThreshold, LengthMismatch
from .filters import downsample, lowpass, savgol_smooth

MIN_SEGMENT = 1e-9
MIN_ARC_LENGTH = 1e-6


@dataclass(frozen=True, eq=False)
class HandTrack:
    keypoints: np.ndarray  # (T, 26, 3) meters
    rate: float = 100.0
    chains: tuple = DEFAULT_FINGER_CHAINS

    def __post_init__(self):
        k = np.asarray(self.keypoints, dtype=float)
        if k.ndim != 3 or k.shape[1:] != (26, 3):
            raise ValueError(f"hand keypoints must be (T, 26, 3), got {k.shape}")
        object.__setattr__(self, "keypoints", k)
        flat = [j for c in self.chains for j in c]
        if len(set(flat)) != len(flat) or not all(0 <= j < 26 for j in flat):
            raise ValueError("finger chain indices must be distinct and within 0..25")
        if any(len(c) < 4 for c in self.chains):
            raise ValueError("each finger chain needs at least 4 joints")

    def __len__(self):
        return len(self.keypoints)


@dataclass(frozen=True, eq=False)
class GraspSeries:
    states: np.ndarray  # (n,) int in {0, 1} at the control rate
    mean_curvature: np.ndarray  # (T,) full rate, NaN where the hand was degenerate

    def __len__(self):
        return len(self.states)


def finger_curvatures(points) -> np.ndarray:
    """Curvature (1/m) of a quadratic fitted through each finger's joints.

    ``points`` is ``(T, J, 3)``, one finger over T frames. The joints are
    expressed in their principal axes: the dominant direction is the
    abscissa, the second the in-plane deviation, and the third (the best-fit
    plane normal) is dropped. A least-squares parabola ``d(x)`` is fitted and
    its graph curvature ``|d''| / (1 + d'^2)^1.5`` is evaluated at the
    abscissa of the polyline's arc-length midpoint. Degenerate or non-finite
    fingers give NaN.
    """
    p = np.asarray(points, dtype=float)
    if p.ndim != 3 or p.shape[2] != 3:
        raise ValueError(f"expected (T, J, 3) finger joints, got {p.shape}")
    if p.shape[1] < 4:
        raise DegenerateFinger(f"need at least 4 joints, got {p.shape[1]}")
    seg = np.linalg.norm(np.diff(p, axis=1), axis=2)
    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(p).all(axis=(1, 2)) | (seg < MIN_SEGMENT).any(axis=1) | (seg.sum(axis=1) < MIN_ARC_LENGTH)
    centered = p - p.mean(axis=1, keepdims=True)
    centered[bad] = 0.0
    seg = np.where(bad[:, None], 1.0, seg)

    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    x = np.einsum("tjk,tk->tj", centered, vt[:, 0])
    d = np.einsum("tjk,tk->tj", centered, vt[:, 1])

    # abscissa at half the arc length, linearly interpolated along the polyline
    arc = np.concatenate([np.zeros((len(p), 1)), np.cumsum(seg, axis=1)], axis=1)
    half = 0.5 * arc[:, -1]
    i = np.clip((arc < half[:, None]).sum(axis=1) - 1, 0, p.shape[1] - 2)
    rows = np.arange(len(p))
    frac = (half - arc[rows, i]) / seg[rows, i]
    x_mid = x[rows, i] + frac * (x[rows, i + 1] - x[rows, i])

    # fit on a unit-scaled abscissa for conditioning, then undo the scale
    scale = np.abs(x).max(axis=1)
    scale[bad | (scale == 0)] = 1.0
    u = x / scale[:, None]
    design = np.stack([u * u, u, np.ones_like(u)], axis=2)
    coef = np.einsum("tkj,tj->tk", np.linalg.pinv(design), d)
    a = coef[:, 0] / scale ** 2
    b = coef[:, 1] / scale
    slope = 2.0 * a * x_mid + b
    kappa = np.abs(2.0 * a) / (1.0 + slope * slope) ** 1.5
    kappa[bad] = np.nan
    return kappa


def finger_curvature(points) -> float:
    """Single-finger :func:`finger_curvatures`; raises DegenerateFinger instead of NaN."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    k = finger_curvatures(p[None])[0]
    if np.isnan(k):
        raise DegenerateFinger("coincident joints or vanishing finger length")
    return float(k)


def mean_curvature(keypoints, chains=DEFAULT_FINGER_CHAINS) -> np.ndarray:
    """Per-frame mean over the finger chains of ``(T, 26, 3)`` keypoints; NaN if any finger is bad."""
    k = np.asarray(keypoints, dtype=float)
    return np.mean([finger_curvatures(k[:, list(c)]) for c in chains], axis=0)


def hand_curvature(keypoints, chains=DEFAULT_FINGER_CHAINS) -> float:
    """Mean finger curvature of one frame; raises DegenerateFinger on any bad finger."""
    k = mean_curvature(np.asarray(keypoints, dtype=float)[None], chains)[0]
    if np.isnan(k):
        raise DegenerateFinger("a finger chain is degenerate")
    return float(k)


def hysteresis_states(kbar, kappa_close: float, kappa_open: float, initial: int = 0) -> np.ndarray:
    """Open/closed state machine over a mean-curvature series.

    Opens -> closes when ``kbar >= kappa_close``; closed -> opens when
    ``kbar <= kappa_open``. NaN samples hold the current state.
    """
    if kappa_open > kappa_close:
        raise InvalidThreshold(f"kappa_open {kappa_open} exceeds kappa_close {kappa_close}")
    kbar = np.asarray(kbar, dtype=float)
    out = np.empty(len(kbar), dtype=np.int64)
    state = int(initial)
    for i, k in enumerate(kbar):
        if not np.isnan(k):
            if state == 0 and k >= kappa_close:
                state = 1
            elif state == 1 and k <= kappa_open:
                state = 0
        out[i] = state
    return out


def count_transitions(states) -> int:
    s = np.asarray(states)
    return int(np.count_nonzero(s[1:] != s[:-1]))


def grasp_state(track: HandTrack, config: GripperConfig | None = None) -> GraspSeries:
    """Full-rate hand keypoints to a control-rate binary grasp series.

    Each keypoint coordinate is low-passed, then Savitzky-Golay smoothed. The
    mean curvature over the finger chains drives the hysteresis state machine,
    and the states are picked down to the control rate. Frames with a
    degenerate finger, or with non-finite keypoints (tracking lost), keep the
    previous state.
    """
    cfg = config or GripperConfig()
    if cfg.kappa_open > cfg.kappa_close:
        raise InvalidThreshold("kappa_open must not exceed kappa_close")
    k = track.keypoints
    lost = ~np.isfinite(k).all(axis=(1, 2))
    kbar = np.full(len(k), np.nan)
    if lost.all():
        return GraspSeries(downsample(np.zeros(len(k), dtype=np.int64), cfg.factor, "pick"), kbar)
    if lost.any():
        # bridge tracking dropouts so the filters see a continuous signal
        good = np.flatnonzero(~lost)
        flat = k.reshape(len(k), -1).copy()
        for c in range(flat.shape[1]):
            flat[lost, c] = np.interp(np.flatnonzero(lost), good, flat[good, c])
        k = flat.reshape(k.shape)
    k = lowpass(k, cfg.lowpass_hz, track.rate)
    k = savgol_smooth(k, cfg.window, cfg.order)

    chains = cfg.chains if cfg.chains is not None else track.chains
    kbar = mean_curvature(k, chains)
    kbar[lost] = np.nan
    states = hysteresis_states(kbar, cfg.kappa_close, cfg.kappa_open)
    return GraspSeries(downsample(states, cfg.factor, "pick"), kbar)


def passthrough_grasp(recorded, factor: int = 5) -> np.ndarray:
    """Robot logs: the recorded binary trigger sequence, picked to the control rate."""
    rec = np.asarray(recorded)
    if rec.ndim != 1:
        raise LengthMismatch(f"expected a 1-D grasp sequence, got shape {rec.shape}")
    return downsample(rec.astype(np.int64), factor, "pick")
