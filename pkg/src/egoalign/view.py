"""View alignment: move the human egocentric camera down to robot eye height.

Depth-based forward warping with a z-buffer, hole masks for disocclusions,
seeded perturbation of the target pose, and two ways to fill the holes: a
nearest-pixel null inpainter and a handshake with an external completer.
"""

from __future__ import annotations

import os
import shlex
import shutil
import struct
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from .errors import (
    AllHoles,
    ContractViolation,
    DanglingReference,
    ExternalFailure,
    InvalidTargetSize,
    IoError,
    ResolutionMismatch,
)
from .geometry import CameraIntrinsics, PoseSE3, RotationSO3, quat_rotate, quat_to_matrix

DEPTH_MAGIC = b"EGDP"
INPAINT_TIMEOUT_ENV = "EGOALIGN_INPAINT_TIMEOUT"
CONTRACT_TOLERANCE = 2  # per channel, in 8-bit levels


@dataclass(frozen=True, eq=False)
class DepthMap:
    """z-depth in meters with a per-pixel validity mask."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if d.ndim != 2 or v.shape != d.shape:
            raise ValueError(f"depth {d.shape} and mask {v.shape} must be equal 2-D grids")
        v = v & np.isfinite(d) & (d > 0)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", v)

    @classmethod
    def from_array(cls, depth):
        """Valid wherever the depth is finite and positive (NaN marks invalid)."""
        d = np.asarray(depth, dtype=np.float64)
        return cls(d, np.isfinite(d) & (d > 0))

    @property
    def shape(self):
        return self.depth.shape

    def scaled(self, factor):
        return DepthMap(self.depth * factor, self.valid)


@dataclass(frozen=True, eq=False)
class ViewTransform:
    """Source-camera to target-camera transform plus how it was drawn."""

    pose: PoseSE3
    drop: float = 0.0
    offset: float = 0.0
    seed: int | None = None

    @classmethod
    def identity(cls):
        return cls(PoseSE3.identity())


@dataclass(frozen=True, eq=False)
class WarpedFrame:
    rgb: np.ndarray  # (H, W, 3) uint8, zeros in holes
    holes: np.ndarray  # (H, W) bool, True = no source pixel landed here
    zbuffer: np.ndarray  # (H, W) float, inf in holes

    @property
    def shape(self):
        return self.holes.shape


# -- file formats ----------------------------------------------------------------

def write_depth(path, depth: DepthMap):
    """EGDP container: magic, u32 height, u32 width, f32 depths (NaN invalid), u8 mask."""
    h, w = depth.shape
    values = np.where(depth.valid, depth.depth, np.nan).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(values.tobytes(order="C"))
        fh.write(depth.valid.astype(np.uint8).tobytes(order="C"))


def read_depth(path) -> DepthMap:
    path = Path(path)
    if not path.exists():
        raise DanglingReference(f"missing depth file {path}")
    blob = path.read_bytes()
    if blob[:4] != DEPTH_MAGIC:
        raise IoError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise IoError(f"{path}: truncated header")
    h, w = struct.unpack("<II", blob[4:12])
    n = h * w
    if len(blob) != 12 + 5 * n:
        raise IoError(f"{path}: expected {12 + 5 * n} bytes for {h}x{w}, got {len(blob)}")
    depth = np.frombuffer(blob, dtype="<f4", count=n, offset=12).reshape(h, w)
    mask = np.frombuffer(blob, dtype=np.uint8, count=n, offset=12 + 4 * n).reshape(h, w)
    return DepthMap(depth.astype(np.float64), mask.astype(bool))


def read_rgb(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DanglingReference(f"missing image {path}")
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise IoError(f"cannot decode {path}: {exc}") from None


def write_png(path, array):
    """8-bit PNG; 2-D arrays are written single-channel."""
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.uint8))
    Image.fromarray(arr).save(path, format="PNG")


def write_mask(path, holes):
    write_png(path, np.where(holes, 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DanglingReference(f"missing mask {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


# -- operations ----------------------------------------------------------------------

def upsample_depth(d: DepthMap, target_w: int, target_h: int) -> DepthMap:
    """Bilinear upsampling that only mixes valid samples.

    Pixel centers are aligned at the corners of both grids. A target pixel
    is valid only if every source neighbour with non-zero weight is valid.
    """
    h, w = d.shape
    if target_w < w or target_h < h:
        raise InvalidTargetSize(f"target {target_w}x{target_h} smaller than native {w}x{h}")
    if (target_w, target_h) == (w, h):
        return DepthMap(d.depth.copy(), d.valid.copy())

    def axis(n_src, n_dst):
        src = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1)) if n_dst > 1 else np.zeros(1)
        i0 = np.clip(np.floor(src).astype(int), 0, n_src - 1)
        frac = src - i0
        i1 = np.minimum(i0 + 1, n_src - 1)
        frac = np.where(i1 == i0, 0.0, frac)
        return i0, i1, frac

    r0, r1, fr = axis(h, target_h)
    c0, c1, fc = axis(w, target_w)
    depth = np.where(d.valid, d.depth, 0.0)
    valid = d.valid

    fr = fr[:, None]
    fc = fc[None, :]
    out = (
        (1 - fr) * (1 - fc) * depth[np.ix_(r0, c0)]
        + (1 - fr) * fc * depth[np.ix_(r0, c1)]
        + fr * (1 - fc) * depth[np.ix_(r1, c0)]
        + fr * fc * depth[np.ix_(r1, c1)]
    )
    ok = (
        valid[np.ix_(r0, c0)]
        & (valid[np.ix_(r0, c1)] | (fc == 0))
        & (valid[np.ix_(r1, c0)] | (fr == 0))
        & (valid[np.ix_(r1, c1)] | (fr == 0) | (fc == 0))
    )
    return DepthMap(np.where(ok, out, np.nan), ok)


def gravity_down(camera_to_world: RotationSO3, world_up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World "down" expressed in the camera frame."""
    down_world = -np.asarray(world_up, dtype=float)
    return quat_rotate(camera_to_world.inverse().q, down_world)


def make_target_pose(base_drop: float = 0.25, perturb_bound: float = 0.05, seed=None,
                     down=(0.0, 1.0, 0.0)) -> ViewTransform:
    """Camera moved ``base_drop + u`` meters along ``down``, ``u ~ U(-bound, bound)``.

    ``down`` defaults to the camera's image-down axis (+y). The returned pose
    maps source-camera points into the target camera, so its translation is
    the negated camera displacement.
    """
    if base_drop < 0:
        raise ValueError(f"base_drop must be >= 0, got {base_drop}")
    if perturb_bound < 0:
        raise ValueError(f"perturb_bound must be >= 0, got {perturb_bound}")
    offset = 0.0
    if perturb_bound > 0:
        offset = float(np.random.default_rng(seed).uniform(-perturb_bound, perturb_bound))
    drop = base_drop + offset
    axis = np.asarray(down, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return ViewTransform(PoseSE3(-drop * axis), drop=drop, offset=offset, seed=seed)


def reproject(rgb, depth: DepthMap, K: CameraIntrinsics, T: ViewTransform) -> WarpedFrame:
    """Forward-warp ``rgb`` into the target camera.

    Each valid pixel is lifted with its depth, moved by ``T``, culled when it
    ends up behind the target camera, and splatted onto the nearest target
    pixel. When several points share a pixel the smallest target depth wins
    (ties: lowest source index).
    """
    rgb = np.asarray(rgb)
    h, w = depth.shape
    if rgb.shape[:2] != (h, w):
        raise ResolutionMismatch(f"rgb {rgb.shape[:2]} vs depth {(h, w)}")
    if (K.width, K.height) != (w, h):
        raise ResolutionMismatch(f"intrinsics {K.width}x{K.height} vs image {w}x{h}")
    n = h * w

    src = np.flatnonzero(depth.valid.ravel())
    rows, cols = np.divmod(src, w)
    z = depth.depth.ravel()[src]
    x = (cols - K.cx) / K.fx * z
    y = (rows - K.cy) / K.fy * z
    pts = np.stack([x, y, z], axis=1)

    rot = quat_to_matrix(T.pose.rotation.q)
    pts = pts @ rot.T + T.pose.translation

    zt = pts[:, 2]
    front = zt > 0
    pts, src, zt = pts[front], src[front], zt[front]
    u = np.rint(K.fx * (pts[:, 0] / zt) + K.cx)
    v = np.rint(K.fy * (pts[:, 1] / zt) + K.cy)
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    src, zt = src[inside], zt[inside]
    lin = v[inside].astype(np.int64) * w + u[inside].astype(np.int64)

    zbuf = np.full(n, np.inf)
    np.minimum.at(zbuf, lin, zt)
    nearest = zt == zbuf[lin]
    winner = np.full(n, n, dtype=np.int64)
    np.minimum.at(winner, lin[nearest], src[nearest])

    written = winner < n
    out = np.zeros((n,) + rgb.shape[2:], dtype=rgb.dtype)
    flat_rgb = rgb.reshape((n,) + rgb.shape[2:])
    out[written] = flat_rgb[winner[written]]
    return WarpedFrame(
        out.reshape(rgb.shape),
        (~written).reshape(h, w),
        zbuf.reshape(h, w),
    )


def fill_holes_nearest(frame: WarpedFrame) -> np.ndarray:
    """Copy each hole's colour from the nearest non-hole pixel.

    Distance is Euclidean in pixel units; ties go to the smallest row, then
    the smallest column.
    """
    holes = frame.holes
    if holes.all():
        raise AllHoles("no valid pixel to fill from")
    out = frame.rgb.copy()
    if not holes.any():
        return out

    known = np.argwhere(~holes)
    missing = np.argwhere(holes)
    tree = cKDTree(known)
    k = min(16, len(known))
    _, idx = tree.query(missing, k=k)
    idx = idx.reshape(len(missing), k)

    cand = known[idx]  # (m, k, 2)
    d2 = ((cand - missing[:, None, :]) ** 2).sum(axis=2)  # exact integers
    best_d2 = d2.min(axis=1)
    # lexicographic (row, col) among equal-distance candidates
    order_key = np.where(d2 == best_d2[:, None], cand[..., 0] * holes.shape[1] + cand[..., 1], np.iinfo(np.int64).max)
    choice = cand[np.arange(len(missing)), order_key.argmin(axis=1)]

    # k nearest may truncate a tie ring; re-query exhaustively where that can happen
    if k < len(known):
        maybe = np.flatnonzero(d2[:, -1] == best_d2)
        for i in maybe:
            r = np.sqrt(best_d2[i]) + 1e-9
            ring = known[tree.query_ball_point(missing[i], r)]
            dd = ((ring - missing[i]) ** 2).sum(axis=1)
            ring = ring[dd == dd.min()]
            choice[i] = ring[np.lexsort((ring[:, 1], ring[:, 0]))[0]]

    out[missing[:, 0], missing[:, 1]] = frame.rgb[choice[:, 0], choice[:, 1]]
    return out


def inpaint_timeout(default=120.0) -> float:
    value = os.environ.get(INPAINT_TIMEOUT_ENV)
    if value is None:
        return float(default)
    try:
        return float(value)
    except ValueError:
        raise ExternalFailure(f"{INPAINT_TIMEOUT_ENV}={value!r} is not a number") from None


def external_inpaint(frame: WarpedFrame, command: str, timeout: float | None = None,
                     workdir=None) -> np.ndarray:
    """Run an external completer on ``frame`` and check it kept the known pixels.

    ``command`` is a shell-style template with ``{rgb_in}``, ``{mask_in}`` and
    ``{rgb_out}`` placeholders. Inputs are written to a fresh directory per
    call, so concurrent calls never share files.
    """
    if timeout is None:
        timeout = inpaint_timeout()
    tmp = Path(tempfile.mkdtemp(prefix="egoalign-inpaint-", dir=workdir))
    try:
        rgb_in, mask_in, rgb_out = tmp / "rgb_in.png", tmp / "mask_in.png", tmp / "rgb_out.png"
        write_png(rgb_in, frame.rgb)
        write_mask(mask_in, frame.holes)
        subst = {"{rgb_in}": str(rgb_in), "{mask_in}": str(mask_in), "{rgb_out}": str(rgb_out)}
        argv = []
        for token in shlex.split(command):
            for key, val in subst.items():
                token = token.replace(key, val)
            argv.append(token)
        if not argv:
            raise ExternalFailure("empty inpainter command")
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=timeout, check=False)
        except FileNotFoundError:
            raise ExternalFailure(f"inpainter executable not found: {argv[0]}") from None
        except subprocess.TimeoutExpired:
            raise ExternalFailure(f"inpainter timed out after {timeout} s") from None
        if proc.returncode != 0:
            err = proc.stderr.decode(errors="replace").strip()[-500:]
            raise ExternalFailure(f"inpainter exited with {proc.returncode}: {err}")
        if not rgb_out.exists():
            raise ExternalFailure("inpainter produced no output image")
        result = read_rgb(rgb_out)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)

    if result.shape != frame.rgb.shape:
        raise ContractViolation(f"inpainter returned {result.shape}, expected {frame.rgb.shape}")
    diff = np.abs(result.astype(np.int16) - frame.rgb.astype(np.int16)).max(axis=-1)
    bad = (~frame.holes) & (diff > CONTRACT_TOLERANCE)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ContractViolation(
            f"inpainter changed {int(bad.sum())} known pixels (first at row {r}, col {c}, "
            f"by {int(diff[r, c])} levels)"
        )
    return result
