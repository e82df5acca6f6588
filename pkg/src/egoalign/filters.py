"""Trajectory smoothing and rate conversion.

All filters work along axis 0 (time) and accept extra trailing channel axes,
so a whole ``(T, 26, 3)`` keypoint track is filtered in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from .errors import InvalidCutoff, InvalidFactor, InvalidOrder, WindowTooLarge
from .geometry import hemisphere_align, quat_canonical, quat_exp, quat_log, quat_multiply, quat_conjugate


@dataclass(frozen=True, eq=False)
class ScalarSeries:
    """Uniformly sampled real-valued channel(s); time runs along axis 0."""

    values: np.ndarray
    rate: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 0 or len(v) < 1:
            raise ValueError("series needs at least one sample")
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class RotationSeries:
    """Quaternion track ``(N, 4)``; hemisphere-aligned on construction."""

    quats: np.ndarray
    rate: float

    def __post_init__(self):
        q = np.asarray(self.quats, dtype=float).reshape(-1, 4)
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
        object.__setattr__(self, "quats", hemisphere_align(q))
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def __len__(self):
        return len(self.quats)


def _check_window(n, window, order):
    if window < 1 or window % 2 == 0:
        raise WindowTooLarge(f"window must be a positive odd integer, got {window}")
    if order < 0 or order >= window:
        raise InvalidOrder(f"polynomial order {order} must be in [0, window={window})")
    if window > n:
        raise WindowTooLarge(f"window {window} exceeds series length {n}")


@lru_cache(maxsize=64)
def savgol_coefficients(window: int, order: int) -> np.ndarray:
    """Projection matrix ``C`` with ``C[o] @ y`` = fit over the window, evaluated at offset ``o``.

    Row ``window // 2`` is the usual centered smoothing kernel; the other rows
    evaluate the same fit off-center and are used for the series ends.
    """
    half = window // 2
    # scaled abscissa keeps the Vandermonde matrix well conditioned
    x = np.arange(-half, half + 1, dtype=float) / max(half, 1)
    vander = np.vander(x, order + 1, increasing=True)
    coeffs = vander @ np.linalg.pinv(vander)
    coeffs.setflags(write=False)
    return coeffs


def _unwrap(s):
    if isinstance(s, ScalarSeries):
        return s.values, s.rate
    return np.asarray(s, dtype=float), None


def _rewrap(values, rate):
    return values if rate is None else ScalarSeries(values, rate)


def savgol_smooth(s, window: int = 11, order: int = 3):
    """Savitzky-Golay smoothing that keeps the series length.

    Interior samples get the centered least-squares polynomial fit. The first
    and last ``window // 2`` samples reuse the fit of the nearest full window,
    evaluated at their own offset.

    Parameters
    ----------
    s : array_like or ScalarSeries
        Samples along axis 0; any trailing axes are independent channels.
    window : int
        Odd window length, at most the series length.
    order : int
        Polynomial order, strictly less than ``window``.
    """
    x, rate = _unwrap(s)
    n = len(x)
    _check_window(n, window, order)
    coeffs = savgol_coefficients(window, order)
    half = window // 2

    out = np.empty_like(x)
    # windows: (n - window + 1, *channels, window)
    windows = sliding_window_view(x, window, axis=0)
    out[half:n - half] = np.tensordot(windows, coeffs[half], axes=([-1], [0]))
    head = x[:window]
    tail = x[n - window:]
    out[:half] = np.tensordot(coeffs[:half], head, axes=([1], [0]))
    out[n - half:] = np.tensordot(coeffs[window - half:], tail, axes=([1], [0]))
    return _rewrap(out, rate)


def lowpass(s, cutoff_hz: float, rate: float | None = None):
    """Zero-phase single-pole low-pass (one forward and one backward pass).

    Each pass is ``y[n] = y[n-1] + a * (x[n] - y[n-1])`` with
    ``a = 1 - exp(-2 pi fc / fs)``, started at the edge sample so constant
    inputs pass through untouched.
    """
    x, series_rate = _unwrap(s)
    fs = series_rate if series_rate is not None else rate
    if fs is None or not fs > 0:
        raise InvalidCutoff("sampling rate required for a plain array")
    if not (0 < cutoff_hz < fs / 2):
        raise InvalidCutoff(f"cutoff {cutoff_hz} Hz must lie in (0, {fs / 2}) Hz")
    a = 1.0 - np.exp(-2.0 * np.pi * cutoff_hz / fs)
    b_coef = [a]
    a_coef = [1.0, -(1.0 - a)]

    def one_pass(v):
        zi = (1.0 - a) * v[:1]
        y, _ = lfilter(b_coef, a_coef, v, axis=0, zi=zi)
        return y

    fwd = one_pass(x)
    out = one_pass(fwd[::-1])[::-1]
    return _rewrap(np.ascontiguousarray(out), series_rate)


def so3_smooth(r, window: int = 11, order: int = 3):
    """Savitzky-Golay smoothing of a rotation track in the tangent space.

    For every output sample the rotations of its window are expressed as
    tangent vectors about the window-center rotation, each tangent channel is
    fitted, and the fit is mapped back through exp.

    Accepts a RotationSeries or an ``(N, 4)`` quaternion array and returns the
    same kind.
    """
    if isinstance(r, RotationSeries):
        q, rate = r.quats, r.rate
    else:
        q, rate = hemisphere_align(quat_canonical(np.asarray(r, dtype=float).reshape(-1, 4))), None
    n = len(q)
    _check_window(n, window, order)
    coeffs = savgol_coefficients(window, order)
    half = window // 2

    idx = np.arange(n)
    centers = np.clip(idx, half, n - 1 - half)
    offsets = idx - centers + half
    members = centers[:, None] + np.arange(-half, half + 1)[None, :]

    ref = q[centers]
    rel = quat_multiply(quat_conjugate(ref)[:, None, :], q[members])
    tangents = quat_log(rel)  # (n, window, 3)
    fitted = np.einsum("nw,nwc->nc", coeffs[offsets], tangents)
    out = quat_canonical(quat_multiply(ref, quat_exp(fitted)))
    if rate is None:
        return out
    return RotationSeries(out, rate)


def downsample(s, factor: int, mode: str = "pick"):
    """Integer-factor rate reduction along axis 0.

    ``pick`` keeps samples ``0, f, 2f, ...``; ``window_average`` averages each
    block of ``f`` samples (a trailing partial block over its own size).
    Rotation series only support ``pick``.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise InvalidFactor(f"factor must be an integer >= 1, got {factor!r}")
    if mode not in ("pick", "window_average"):
        raise ValueError(f"unknown downsample mode {mode!r}")
    if isinstance(s, RotationSeries):
        if mode != "pick":
            raise ValueError("rotation series can only be downsampled with mode='pick'")
        return RotationSeries(s.quats[::factor], s.rate / factor)

    x, rate = _unwrap(s)
    if mode == "pick":
        out = x[::factor].copy()
    else:
        n = len(x)
        starts = np.arange(0, n, factor)
        sums = np.add.reduceat(x, starts, axis=0)
        counts = np.minimum(factor, n - starts).astype(float)
        out = sums / counts.reshape((-1,) + (1,) * (x.ndim - 1))
    return out if rate is None else ScalarSeries(out, rate / factor)
