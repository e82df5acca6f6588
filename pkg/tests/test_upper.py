import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egoalign.config import UpperConfig
from egoalign.errors import InsufficientDuration, LengthMismatch, TooShort
from egoalign.geometry import PoseSE3, RotationSO3, quat_exp, rotation_distance
from egoalign.upper import (
    PoseTrack,
    WristTrack,
    align_upper,
    compute_delta_ee,
    integrate_deltas,
    rotation_gate_violations,
    smooth_and_downsample,
    to_pelvis_frame,
)

from conftest import homogeneous, rodrigues


def smooth_track(n, rng, speed=0.3):
    t = np.arange(n) / 100.0
    freq = rng.uniform(0.2, 1.0, size=(2, 3))
    phase = rng.uniform(0, 2 * np.pi, size=(2, 3))
    trans = rng.normal(size=3) + speed * np.sin(freq[0] * t[:, None] * 2 * np.pi + phase[0])
    rotvec = rng.normal(scale=0.5, size=3) + 0.4 * np.sin(freq[1] * t[:, None] + phase[1])
    return PoseTrack(trans, quat_exp(rotvec))


def random_pose(rng):
    return PoseSE3(rng.normal(scale=5.0, size=3), RotationSO3(rng.normal(size=4)))


def test_pelvis_equal_to_wrist_gives_identity(rng):
    p = smooth_track(50, rng)
    rel = to_pelvis_frame(p, p)
    np.testing.assert_allclose(rel.translations, 0, atol=1e-12)
    np.testing.assert_allclose(rel.quats, np.tile([1.0, 0, 0, 0], (50, 1)), atol=1e-12)


def test_identity_pelvis_leaves_wrist():
    wrist = PoseTrack(np.tile([0.3, 0, 0.4], (5, 1)), np.tile([1.0, 0, 0, 0], (5, 1)))
    rel = to_pelvis_frame(PoseTrack.identity(5), wrist)
    np.testing.assert_allclose(rel.translations, wrist.translations)


def test_rotated_pelvis_against_matrix_oracle():
    pelvis = PoseTrack([[0, 0, 0]], [RotationSO3.about_z(np.pi / 2).q])
    wrist = PoseTrack([[0, 1, 0]], [[1.0, 0, 0, 0]])
    rel = to_pelvis_frame(pelvis, wrist)
    oracle = np.linalg.inv(homogeneous(rodrigues([0, 0, np.pi / 2]), [0, 0, 0])) @ homogeneous(np.eye(3), [0, 1, 0])
    np.testing.assert_allclose(rel.translations[0], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(rel[0].as_matrix(), oracle, atol=1e-12)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        to_pelvis_frame(PoseTrack.identity(3), PoseTrack.identity(4))


def test_static_deltas_are_zero():
    d = compute_delta_ee(PoseTrack(np.tile([0.2, 0.1, 0.3], (10, 1)), np.tile(RotationSO3.about_z(0.4).q, (10, 1))))
    assert d.shape == (9, 6)
    np.testing.assert_allclose(d, 0, atol=1e-12)


def test_constant_translation_step():
    d = compute_delta_ee(PoseTrack(np.outer(np.arange(10) * 0.01, [1, 0, 0]), np.tile([1.0, 0, 0, 0], (10, 1))))
    np.testing.assert_allclose(d, np.tile([0.01, 0, 0, 0, 0, 0], (9, 1)), atol=1e-12)


def test_delta_translation_in_earlier_frame():
    a = PoseSE3([0, 0, 0], RotationSO3.about_z(np.pi / 2))
    b = PoseSE3([0, 1, 0], RotationSO3.about_z(np.pi / 2))
    d = compute_delta_ee(PoseTrack.from_poses([a, b]))
    np.testing.assert_allclose(d[0, :3], [1, 0, 0], atol=1e-12)


def test_too_short():
    with pytest.raises(TooShort):
        compute_delta_ee(PoseTrack.identity(1))


def test_integrate_reconstructs_sequence(rng):
    poses = smooth_track(120, rng, speed=1.0)
    d = compute_delta_ee(poses)
    rec = integrate_deltas(poses[0], d)
    np.testing.assert_allclose(rec.translations, poses.translations, atol=1e-6)
    assert rotation_distance(rec[-1].rotation, poses[-1].rotation) <= 1e-6


def test_static_track_actions():
    n = 500
    pelvis = PoseTrack(np.tile([1.0, 2.0, 0.9], (n, 1)), np.tile(RotationSO3.about_z(0.3).q, (n, 1)))
    wrist = PoseTrack(np.tile([1.3, 2.1, 1.0], (n, 1)), np.tile(RotationSO3.from_rotvec([0.1, 0.2, 0.3]).q, (n, 1)))
    a = align_upper(WristTrack(wrist, wrist, pelvis))
    assert a.shape == (99, 12)
    np.testing.assert_allclose(a, 0, atol=1e-12)


def test_constant_velocity_step():
    n = 400
    t = np.arange(n) / 100.0
    wrist = PoseTrack(np.stack([0.5 * t, np.zeros(n), np.zeros(n)], axis=1), np.tile([1.0, 0, 0, 0], (n, 1)))
    a = align_upper(WristTrack(wrist, wrist, PoseTrack.identity(n)))
    np.testing.assert_allclose(a[2:-2, 0], 0.025, atol=1e-6)
    np.testing.assert_allclose(a[2:-2, 1:3], 0, atol=1e-9)


def test_insufficient_duration():
    with pytest.raises(InsufficientDuration):
        align_upper(WristTrack(PoseTrack.identity(150), PoseTrack.identity(150), PoseTrack.identity(150)))


def test_chained_deltas_recover_downsampled_track(rng):
    n = 300
    pelvis, left, right = (smooth_track(n, rng) for _ in range(3))
    a = align_upper(WristTrack(left, right, pelvis))
    ds = smooth_and_downsample(to_pelvis_frame(pelvis, left))
    rec = integrate_deltas(ds[0], a[:, :6])
    np.testing.assert_allclose(rec.translations[-1], ds.translations[-1], atol=1e-6)
    assert rotation_distance(rec[-1].rotation, ds[-1].rotation) <= 1e-6


def test_calibration_is_frame_invariant_too(rng):
    n = 250
    pelvis, left, right = (smooth_track(n, rng) for _ in range(3))
    cfg = UpperConfig(calibration_left=tuple(RotationSO3.from_rotvec([0, 0.3, 0]).q),
                      calibration_right=tuple(RotationSO3.from_rotvec([0.2, 0, 0.1]).q))
    g = random_pose(rng)
    a = align_upper(WristTrack(left, right, pelvis), cfg)
    b = align_upper(WristTrack(left.transformed(g), right.transformed(g), pelvis.transformed(g)), cfg)
    np.testing.assert_allclose(a, b, atol=1e-9)
    plain = align_upper(WristTrack(left, right, pelvis), cfg, calibrate=False)
    assert not np.allclose(a, plain)


@given(st.integers(0, 2**32 - 1))
def test_global_rigid_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 220
    pelvis, left, right = (smooth_track(n, rng) for _ in range(3))
    g = random_pose(rng)
    a = align_upper(WristTrack(left, right, pelvis))
    b = align_upper(WristTrack(left.transformed(g), right.transformed(g), pelvis.transformed(g)))
    assert np.abs(a - b).max() <= 1e-9


def test_rotation_gate():
    a = np.zeros((4, 12))
    a[1, 3] = 0.6
    a[3, 11] = -0.5
    np.testing.assert_array_equal(rotation_gate_violations(a, 0.5), [1, 3])
