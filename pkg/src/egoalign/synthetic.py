"""Scripted synthetic recordings with known ground truth.

A script is a list of segments, each running one locomotion primitive for a
fixed duration, optionally switching the grasp state of each hand. The same
script produces a human recording (pelvis/wrist/hand trackers plus RGB-D
frames) or a robot log (commands, end-effector poses, RGB), and doubles as
the oracle for what the aligner should emit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .geometry import CameraIntrinsics, compose_arrays, quat_exp, quat_from_matrix, quat_from_yaw, quat_multiply
from .recording import HumanRecording, RobotRecording, write_recording
from .upper import PoseTrack
from .view import DepthMap, write_depth, write_png

# primitive -> (forward, lateral, yaw, height) direction
PRIMITIVES = {
    "still": (0, 0, 0, 0),
    "forward": (1, 0, 0, 0),
    "backward": (-1, 0, 0, 0),
    "left": (0, 1, 0, 0),
    "right": (0, -1, 0, 0),
    "turn_left": (0, 0, 1, 0),
    "turn_right": (0, 0, -1, 0),
    "squat": (0, 0, 0, -1),
    "rise": (0, 0, 0, 1),
}

# camera axes (x right, y down, z forward) expressed in the body frame (x fwd, y left, z up)
BODY_FROM_CAMERA = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

OPEN_CURVATURE = 3.0
CLOSED_CURVATURE = 40.0
GRIP_RAMP_S = 0.2


@dataclass(frozen=True)
class Segment:
    kind: str
    duration: float
    speed: float | None = None  # m/s, rad/s for turns, m/s for height
    grip: tuple | None = None  # (left, right) state from this segment on


@dataclass(frozen=True)
class Speeds:
    linear: float = 0.5
    yaw: float = 0.6
    height: float = 0.2


@dataclass(eq=False)
class Trajectory:
    positions: np.ndarray  # (N, 3)
    yaw: np.ndarray  # (N,)
    commands: np.ndarray  # (N, 4) int: forward, lateral, yaw, height
    grip: np.ndarray  # (N, 2) int
    rate: float

    def __len__(self):
        return len(self.yaw)


def simulate(script, rate=100.0, speeds=Speeds(), start_height=0.95) -> Trajectory:
    """Integrate the script into a full-rate planar pose + height trajectory.

    The command at frame ``t`` moves the body from frame ``t`` to ``t + 1``.
    """
    cmds, grips, vel = [], [], []
    grip = (0, 0)
    for seg in script:
        if seg.kind not in PRIMITIVES:
            raise ValueError(f"unknown primitive {seg.kind!r}")
        n = int(round(seg.duration * rate))
        if seg.grip is not None:
            grip = tuple(int(g) for g in seg.grip)
        c = PRIMITIVES[seg.kind]
        lin = seg.speed if seg.speed is not None else speeds.linear
        yaw = seg.speed if seg.speed is not None else speeds.yaw
        hgt = seg.speed if seg.speed is not None else speeds.height
        for _ in range(n):
            cmds.append(c)
            grips.append(grip)
            vel.append((c[0] * lin, c[1] * lin, c[2] * yaw, c[3] * hgt))
    vel = np.array(vel, dtype=float)
    n = len(vel)
    pos = np.zeros((n, 3))
    yaw = np.zeros(n)
    pos[0, 2] = start_height
    dt = 1.0 / rate
    for t in range(n - 1):
        c, s = np.cos(yaw[t]), np.sin(yaw[t])
        vx, vy, wz, vz = vel[t]
        pos[t + 1, 0] = pos[t, 0] + (c * vx - s * vy) * dt
        pos[t + 1, 1] = pos[t, 1] + (s * vx + c * vy) * dt
        pos[t + 1, 2] = pos[t, 2] + vz * dt
        yaw[t + 1] = yaw[t] + wz * dt
    return Trajectory(pos, yaw, np.array(cmds, dtype=np.int64), np.array(grips, dtype=np.int64), rate)


def expected_steps(traj: Trajectory, factor=5):
    """Control-rate ground truth: command and grasp at the start of each window."""
    return traj.commands[::factor].copy(), traj.grip[::factor].copy()


def stable_steps(traj: Trajectory, factor=5, margin=2, grip_ramp=GRIP_RAMP_S):
    """Mask of control steps whose whole window plus ``margin`` steps on each side
    shares one command and one grasp state. Frames still inside a finger ramp
    after a grasp change count as unsettled."""
    n = -(-len(traj) // factor)
    key = np.concatenate([traj.commands, traj.grip], axis=1)
    unsettled = np.zeros(len(traj), dtype=bool)
    ramp = int(round(grip_ramp * traj.rate))
    for c in np.flatnonzero((np.diff(traj.grip, axis=0) != 0).any(axis=1)) + 1:
        unsettled[c:c + ramp] = True
    ok = np.zeros(n, dtype=bool)
    for j in range(n):
        lo = max(0, (j - margin) * factor)
        hi = min(len(traj), (j + margin + 1) * factor)
        block = key[lo:hi]
        ok[j] = bool((block == block[0]).all()) and not unsettled[lo:hi].any()
    return ok


def tracker_noise(shape, rate, amplitude, rng, correlation_s=0.2):
    """Slow tracker drift: Gaussian-smoothed white noise rescaled to ``amplitude`` RMS."""
    if amplitude <= 0:
        return np.zeros(shape)
    w = gaussian_filter1d(rng.normal(size=shape), correlation_s * rate, axis=0, mode="nearest")
    return w * (amplitude / max(float(w.std()), 1e-12))


# -- kinematic props --------------------------------------------------------------------

def _hand_template(curvature, side):
    """26 OpenXR-style joints in the wrist frame for a uniform finger curl."""
    pts = np.zeros((26, 3))
    pts[0] = (0.05, 0.0, 0.0)  # palm
    pts[1] = (0.0, 0.0, 0.0)  # wrist
    lateral = 1.0 if side == "left" else -1.0
    chains = [(2, 4, 0.025, 0.035), (6, 5, 0.02, 0.02), (11, 5, 0.021, 0.0),
              (16, 5, 0.02, -0.02), (21, 5, 0.017, -0.038)]
    for start, count, seg, y in chains:
        base = np.array([0.02, lateral * y, 0.0])
        s = np.arange(count) * seg
        k = curvature
        x = np.sin(k * s) / k
        z = -(1.0 - np.cos(k * s)) / k
        pts[start:start + count] = base + np.stack([x, np.zeros(count), z], axis=1)
    return pts


def _curvature_track(grip, rate, ramp=GRIP_RAMP_S):
    """Per-frame finger curvature easing between open and closed over ``ramp`` s."""
    step = (CLOSED_CURVATURE - OPEN_CURVATURE) / max(1.0, ramp * rate)
    k = np.empty(len(grip))
    cur = OPEN_CURVATURE if grip[0] == 0 else CLOSED_CURVATURE
    for t, g in enumerate(grip):
        target = CLOSED_CURVATURE if g else OPEN_CURVATURE
        cur = min(cur + step, target) if target > cur else max(cur - step, target)
        k[t] = cur
    return k


def hand_keypoints(grip, wrist: PoseTrack, side, rate=100.0, noise=0.0, rng=None):
    """World-frame (N, 26, 3) hand joints following the grasp timeline."""
    kappa = _curvature_track(np.asarray(grip), rate)
    local = np.stack([_hand_template(k, side) for k in kappa])
    world, _ = compose_arrays(wrist.translations[:, None, :], wrist.quats[:, None, :], local,
                              np.broadcast_to(wrist.quats[:, None, :], local.shape[:2] + (4,)))
    if noise > 0:
        world = world + rng.normal(0.0, noise, world.shape)
    return world


def _wrist_local(n, rate, side, phase):
    t = np.arange(n) / rate
    lateral = 0.2 if side == "left" else -0.2
    trans = np.stack([
        0.35 + 0.05 * np.sin(0.8 * t + phase),
        lateral + 0.03 * np.cos(0.6 * t + phase),
        0.15 + 0.04 * np.sin(0.5 * t + 2 * phase),
    ], axis=1)
    rotvec = np.stack([0.2 * np.sin(0.7 * t + phase), 0.15 * np.cos(0.4 * t), 0.1 * np.sin(0.3 * t)], axis=1)
    return PoseTrack(trans, quat_exp(rotvec))


BODY_TEMPLATE = np.array(
    [[0, 0, 0], [0, 0.1, -0.05], [0, -0.1, -0.05], [0, 0, 0.15]]
    + [[0, 0.1, -0.05 - 0.2 * k] for k in range(1, 5)]
    + [[0, -0.1, -0.05 - 0.2 * k] for k in range(1, 5)]
    + [[0, 0, 0.15 + 0.12 * k] for k in range(1, 4)]
    + [[0, 0.18, 0.45], [0, 0.3, 0.3], [0, 0.35, 0.1], [0, -0.18, 0.45], [0, -0.3, 0.3], [0, -0.35, 0.1], [0.05, 0, 0.65],
       [0.1, 0.03, 0.65], [0.1, -0.03, 0.65]],
    dtype=float,
)


# -- images ------------------------------------------------------------------------------

def synthetic_intrinsics(width=96, height=64):
    f = 0.9 * width
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)


def synthetic_rgb(index, width=96, height=64, seed=0):
    yy, xx = np.mgrid[0:height, 0:width]
    shift = index * 3 + seed * 7
    r = (xx * 255 // max(1, width - 1))
    g = (yy * 255 // max(1, height - 1))
    b = (((xx + shift) // 8 + yy // 8) % 2) * 200 + 30
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def synthetic_depth(width=96, height=64, box_depth=1.2, wall_depth=2.0):
    d = np.full((height, width), wall_depth)
    d[height // 3: 2 * height // 3, width // 3: 2 * width // 3] = box_depth
    valid = np.ones_like(d, dtype=bool)
    valid[:2, :2] = False  # a few invalid predictions in the corner
    return DepthMap(d, valid)


# -- writers -------------------------------------------------------------------------------

def _image_refs(root: Path, n, every, make, prefix, ext, writer):
    refs = []
    (root / prefix).mkdir(parents=True, exist_ok=True)
    cache = {}
    for i in range(n):
        k = i // every
        if k not in cache:
            rel = f"{prefix}/{k:06d}.{ext}"
            writer(root / rel, make(k))
            cache[k] = rel
        refs.append(cache[k])
    return refs


def make_human_recording(path, script, recording_id=None, seed=0, task="synthetic task",
                         rate=100.0, speeds=Speeds(), jitter=2e-4, hand_noise=3e-4,
                         image_size=(96, 64), image_every=5):
    """Write a human recording that follows ``script`` and return (recording, trajectory)."""
    path = Path(path)
    rng = np.random.default_rng(seed)
    traj = simulate(script, rate, speeds)
    n = len(traj)
    pos = traj.positions + tracker_noise(traj.positions.shape, rate, jitter, rng)
    pelvis = PoseTrack(pos, quat_from_yaw(traj.yaw))

    wrists = {}
    for side, phase in (("left", 0.0), ("right", 1.3)):
        local = _wrist_local(n, rate, side, phase + seed)
        t, q = compose_arrays(pelvis.translations, pelvis.quats, local.translations, local.quats)
        wrists[side] = PoseTrack(t + tracker_noise(t.shape, rate, jitter, rng), q)

    cam_q = quat_from_matrix(BODY_FROM_CAMERA)
    head_t, _ = compose_arrays(pelvis.translations, pelvis.quats, np.array([0.05, 0.0, 0.65]), cam_q)
    headset = PoseTrack(head_t, quat_multiply(pelvis.quats, cam_q))

    body, _ = compose_arrays(pelvis.translations[:, None, :], pelvis.quats[:, None, :], BODY_TEMPLATE[None],
                             np.broadcast_to(pelvis.quats[:, None, :], (n, len(BODY_TEMPLATE), 4)))
    hands = {
        side: hand_keypoints(traj.grip[:, k], wrists[side], side, rate, hand_noise, rng)
        for k, side in enumerate(("left", "right"))
    }

    w, h = image_size
    rgb_refs = _image_refs(path, n, image_every, lambda k: synthetic_rgb(k, w, h, seed), "rgb", "png", write_png)
    depth_refs = _image_refs(path, n, image_every, lambda k: synthetic_depth(w // 2, h // 2), "depth", "egdp",
                             write_depth)
    rec = HumanRecording(
        recording_id=recording_id or path.name,
        task=task,
        timestamps=np.arange(n) / rate,
        headset=headset,
        pelvis=pelvis,
        left_wrist=wrists["left"],
        right_wrist=wrists["right"],
        body=body,
        left_hand=hands["left"],
        right_hand=hands["right"],
        rgb_refs=rgb_refs,
        depth_refs=depth_refs,
        intrinsics=synthetic_intrinsics(w, h),
        rate=rate,
        subject={"height_m": 1.7, "synthetic_seed": seed},
        root=path,
    )
    write_recording(rec, path)
    return rec, traj


def make_robot_recording(path, script, recording_id=None, seed=0, task="synthetic task",
                         rate=100.0, speeds=Speeds(), image_size=(96, 64), image_every=5):
    """Write a robot teleoperation log that follows ``script``; returns (recording, trajectory)."""
    path = Path(path)
    traj = simulate(script, rate, speeds, start_height=0.75)
    n = len(traj)
    base = PoseTrack(traj.positions, quat_from_yaw(traj.yaw))
    ee = {side: _wrist_local(n, rate, side, phase + seed) for side, phase in (("left", 0.4), ("right", 2.0))}
    w, h = image_size
    rgb_refs = _image_refs(path, n, image_every, lambda k: synthetic_rgb(k, w, h, seed + 101), "rgb", "png",
                           write_png)
    rec = RobotRecording(
        recording_id=recording_id or path.name,
        task=task,
        timestamps=np.arange(n) / rate,
        base=base,
        left_ee=ee["left"],
        right_ee=ee["right"],
        nav=traj.commands[:, :3].copy(),
        grip=traj.grip.copy(),
        rgb_refs=rgb_refs,
        intrinsics=synthetic_intrinsics(w, h),
        rate=rate,
        root=path,
    )
    write_recording(rec, path)
    return rec, traj


def walk_grasp_squat(variant=0):
    """Stand, walk forward, close the hands, squat, rise and walk back."""
    v = variant % 4
    return [
        Segment("still", 0.5 + 0.1 * v),
        Segment("forward", 1.5 + 0.25 * v),
        Segment("still", 0.5, grip=(1, 1) if v % 2 == 0 else (1, 0)),
        Segment("squat", 0.6),
        Segment("still", 0.5),
        Segment("rise", 0.6),
        Segment("backward", 1.0),
        Segment("still", 0.6, grip=(0, 0)),
    ]


def primitive_tour(variant=0):
    """Robot-style script touching every primitive once."""
    order = ["forward", "left", "turn_left", "backward", "right", "turn_right", "squat", "rise"]
    rot = variant % len(order)
    order = order[rot:] + order[:rot]
    script = [Segment("still", 0.4)]
    for i, kind in enumerate(order):
        script.append(Segment(kind, 0.6 + 0.1 * ((i + variant) % 3), grip=(i % 2, (i + 1) % 2) if i % 3 == 0 else None))
        script.append(Segment("still", 0.3))
    return script


def make_corpus(root, n_human=10, n_robot=10, seed=0):
    """Write ``human/`` and ``robot/`` directories of scripted recordings under ``root``."""
    root = Path(root)
    truth = {}
    for i in range(n_human):
        rid = f"human_{i:03d}"
        _, traj = make_human_recording(root / "human" / rid, walk_grasp_squat(i), rid, seed=seed + i,
                                       task="walk to the table and pick up the box")
        truth[rid] = traj
    for i in range(n_robot):
        rid = f"robot_{i:03d}"
        _, traj = make_robot_recording(root / "robot" / rid, primitive_tour(i), rid, seed=seed + 1000 + i,
                                       task="walk to the table and pick up the box")
        truth[rid] = traj
    return truth
