import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egoalign.errors import EmptyPool, InvalidRatio
from egoalign.manifest import build_manifest, parse_ratio, read_manifest, split_batch, write_manifest


def pool(prefix, n, frames=50):
    return [(f"{prefix}_{i:03d}", frames + i) for i in range(n)]


@pytest.mark.parametrize("ratio,batch,expected", [
    ("1:2", 6, (2, 4)),
    ("2:1", 256, (171, 85)),
    ("1:2", 256, (85, 171)),
    ("1:1", 3, (2, 1)),
    ("0:1", 8, (0, 8)),
    ("1:0", 8, (8, 0)),
])
def test_split_batch(ratio, batch, expected):
    assert split_batch(batch, ratio) == expected


@pytest.mark.parametrize("bad", ["1", "1:2:3", "a:b", "-1:2", "0:0", "nan:1"])
def test_invalid_ratio(bad):
    with pytest.raises(InvalidRatio):
        parse_ratio(bad)


def test_batch_composition():
    m = build_manifest(pool("r", 7), pool("h", 20), "1:2", batch_size=6, n_batches=30, seed=3)
    for b in m.batches():
        sources = [s for s, _, _ in b]
        assert sources.count("robot") == 2 and sources.count("human") == 4


def test_frames_within_episode_length():
    robot = pool("r", 5, frames=3)
    m = build_manifest(robot, pool("h", 4), "1:1", batch_size=10, n_batches=200, seed=0)
    lengths = dict(robot)
    for e, f in m.robot.reshape(-1, 2):
        assert 0 <= f < lengths[m.robot_ids[e]]


def test_same_seed_same_manifest(tmp_path):
    args = (pool("r", 9), pool("h", 30), "1:2", 12, 50)
    write_manifest(build_manifest(*args, seed=5), tmp_path / "a.jsonl")
    write_manifest(build_manifest(*args, seed=5), tmp_path / "b.jsonl")
    write_manifest(build_manifest(*args, seed=6), tmp_path / "c.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


def test_listing_order_does_not_matter():
    r = pool("r", 9)
    a = build_manifest(r, pool("h", 4), "1:1", 4, 20, seed=1)
    b = build_manifest(r[::-1], pool("h", 4)[::-1], "1:1", 4, 20, seed=1)
    np.testing.assert_array_equal(a.robot, b.robot)
    np.testing.assert_array_equal(a.human, b.human)


def test_empty_pool():
    with pytest.raises(EmptyPool):
        build_manifest([], pool("h", 3), "1:2", 6, 5)
    m = build_manifest([], pool("h", 3), "0:1", 6, 5)
    assert m.robot.shape == (5, 0, 2)
    with pytest.raises(EmptyPool):
        build_manifest([("r", 0)], pool("h", 3), "1:2", 6, 5)


def test_file_round_trip(tmp_path):
    m = build_manifest(pool("r", 3), pool("h", 5), "1:2", 6, 10, seed=2)
    write_manifest(m, tmp_path / "m.jsonl")
    header, batches = read_manifest(tmp_path / "m.jsonl")
    assert header["n_batches"] == 10 and header["robot_per_batch"] == 2
    assert batches == [m.batch(i) for i in range(10)]


@given(st.integers(0, 5), st.integers(0, 5), st.integers(1, 300), st.integers(1, 40), st.integers(0, 2**31))
def test_coverage_and_ratio(r, h, batch, n_pool, seed):
    if r + h == 0:
        return
    n_robot, n_human = split_batch(batch, (r, h))
    assert abs(n_robot / batch - r / (r + h)) < 1 / batch
    if n_robot == 0:
        return
    need = -(-n_pool // n_robot)
    m = build_manifest(pool("r", n_pool), pool("h", 3), (r, h), batch, need, seed=seed)
    assert set(m.robot[:, :, 0].ravel()) == set(range(n_pool))
