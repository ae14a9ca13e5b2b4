import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqcert import _kernels_py, kernels
from freqcert.rng import stream, stream_key

try:
    from freqcert import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def test_stream_key_recipe():
    key = stream_key(7, "dosw", 3)
    assert key[0] == 7
    # blake2b-8 of repr(("dosw", 3)), little endian
    assert int(key[1]) == 10631631735596115659
    assert stream_key(7, "dosw", 3)[1] != stream_key(7, "dosw", 4)[1]
    assert stream_key(-1)[0] == 2**64 - 1


def test_stream_frozen_draws():
    u = stream(0, "dosw", 0).random(3)
    assert u.tolist() == [0.12084873687580189, 0.09022986106000153, 0.13603485551610572]
    assert not np.array_equal(u, stream(1, "dosw", 0).random(3))


def test_knn_select_ties_lower_index():
    d2 = np.array([[0, 1, 1, 2], [1, 0, 1, 1], [1, 1, 0, 1], [2, 1, 1, 0]], dtype=float)
    out = kernels.knn_select(d2, 2)
    assert out.tolist() == [[1, 2], [0, 2], [0, 1], [1, 2]]


def test_weighted_sample_zero_weight_never_drawn():
    w = np.array([0.0, 1.0, 0.0, 2.0, 1.0])
    for s in range(20):
        pick = kernels.weighted_sample(w, 3, stream(s, "t").random(3))
        assert sorted(pick.tolist()) == [1, 3, 4]


def test_weighted_sample_exhausted():
    with pytest.raises(ValueError, match="no remaining weight"):
        _kernels_py.weighted_sample(np.array([1.0, 0.0]), 2, np.array([0.5, 0.5]))


def test_weighted_sample_u_one_clamps_to_last_positive():
    w = np.array([1.0, 1.0, 0.0])
    assert _kernels_py.weighted_sample(w, 1, np.array([1.0])).tolist() == [1]


@needs_ext
def test_backend_selected():
    assert kernels.BACKEND == "cython"


@needs_ext
@settings(max_examples=80, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**32), st.booleans())
def test_knn_backends_bit_identical(n, seed, quantize):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 3))
    if quantize:
        pts = np.round(pts * 2) / 2  # many exact ties
    d2 = ((pts[:, None] - pts[None]) ** 2).sum(-1)
    k = int(rng.integers(1, n))
    assert np.array_equal(compiled.knn_select(d2, k), _kernels_py.knn_select(d2, k))


@needs_ext
@settings(max_examples=80, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32))
def test_sampling_backends_bit_identical(n, seed):
    rng = np.random.default_rng(seed)
    w = rng.random(n) * (rng.random(n) < 0.7)
    w[rng.integers(n)] = 1.0
    size = int(rng.integers(1, np.count_nonzero(w) + 1))
    u = rng.random(size)
    assert np.array_equal(compiled.weighted_sample(w, size, u), _kernels_py.weighted_sample(w, size, u))
