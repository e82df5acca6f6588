import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egoalign.blend import blend_chunks
from egoalign.episode import ACTION_DIM, DISCRETE_COLS
from egoalign.errors import EmptyChunk, InvalidK

CONT = [c for c in range(ACTION_DIM) if c not in DISCRETE_COLS]


def chunk(rng, n):
    a = rng.normal(scale=0.05, size=(n, ACTION_DIM))
    a[:, 12:15] = rng.integers(-1, 2, size=(n, 3))
    a[:, 15:17] = rng.integers(0, 2, size=(n, 2))
    return a


def test_two_step_overlap_endpoints(rng):
    old, new = chunk(rng, 2), chunk(rng, 2)
    out = blend_chunks(old, new, 0)
    np.testing.assert_array_equal(out[0], old[0])
    np.testing.assert_array_equal(out[1], new[1])


def test_weights_are_linear(rng):
    old = np.zeros((5, ACTION_DIM))
    new = np.ones((5, ACTION_DIM))
    out = blend_chunks(old, new, 0)
    np.testing.assert_allclose(out[:, 0], [0, 0.25, 0.5, 0.75, 1.0])
    # the 0.5 tie goes to the new chunk
    np.testing.assert_array_equal(out[:, 12], [0, 0, 1, 1, 1])


def test_constant_chunks_unchanged():
    c = np.full((6, ACTION_DIM), 0.3)
    np.testing.assert_array_equal(blend_chunks(c[:4], c, 1), c[1:])


def test_drop_and_tail(rng):
    old, new = chunk(rng, 3), chunk(rng, 8)
    out = blend_chunks(old, new, 2)
    assert len(out) == 6
    np.testing.assert_array_equal(out[3:], new[5:])
    np.testing.assert_array_equal(out[0], old[0])


def test_single_overlap_takes_new(rng):
    old, new = chunk(rng, 1), chunk(rng, 4)
    np.testing.assert_array_equal(blend_chunks(old, new, 0), new)
    np.testing.assert_array_equal(blend_chunks(np.zeros((0, ACTION_DIM)), new, 1), new[1:])


def test_errors(rng):
    new = chunk(rng, 4)
    with pytest.raises(InvalidK):
        blend_chunks(new, new, 4)
    with pytest.raises(InvalidK):
        blend_chunks(new, new, -1)
    with pytest.raises(EmptyChunk):
        blend_chunks(new, np.zeros((0, ACTION_DIM)), 0)


@given(st.integers(0, 20), st.integers(1, 20), st.integers(0, 2**31))
def test_convex_hull_and_alphabet(n_old, n_new, seed):
    rng = np.random.default_rng(seed)
    old, new = chunk(rng, n_old), chunk(rng, n_new)
    k = int(rng.integers(0, n_new))
    out = blend_chunks(old, new, k)
    m = min(n_old, n_new - k)
    lo = np.minimum(old[:m], new[k:k + m])
    hi = np.maximum(old[:m], new[k:k + m])
    assert (out[:m, CONT] >= lo[:, CONT] - 1e-15).all() and (out[:m, CONT] <= hi[:, CONT] + 1e-15).all()
    disc = list(DISCRETE_COLS)
    assert ((out[:m, disc] == old[:m, disc]) | (out[:m, disc] == new[k:k + m, disc])).all()
    assert set(np.unique(out[:, 12:15])) <= {-1, 0, 1}
    assert set(np.unique(out[:, 15:17])) <= {0, 1}
