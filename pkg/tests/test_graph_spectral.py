import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqcert.cloud_io import PointCloud, generate_shape
from freqcert.graph_spectral import (
    KnnGraph, build_knn_graph, dump_spectrum_csv, eigendecompose, eigengap, gft, inverse_gft, laplacian,
    spectral_decomposition,
)


def _graph(w):
    w = np.asarray(w, dtype=float)
    return KnnGraph(n=w.shape[0], k=1, weights=w, neighbors=np.zeros((w.shape[0], 1), dtype=np.int64))


def test_two_points_single_edge():
    g = build_knn_graph(PointCloud([[0, 0, 0], [1, 0, 0]]), 1)
    assert g.weights[0, 1] == g.weights[1, 0] == pytest.approx(math.exp(-1), abs=1e-15)
    assert g.weights[0, 1] == pytest.approx(0.367879, abs=1e-6)
    assert np.all(np.diag(g.weights) == 0)


def test_coincident_points_weight_one():
    g = build_knn_graph(PointCloud([[0, 0, 0], [0, 0, 0], [5, 0, 0]]), 1)
    assert g.weights[0, 1] == 1.0


def test_collinear_symmetrization():
    # 0 -- 1 -- 2 with spacing 1; k=1: 0->1, 1->0 (tie to lower), 2->1
    g = build_knn_graph(PointCloud([[0, 0, 0], [1, 0, 0], [2, 0, 0]]), 1)
    assert g.neighbors.ravel().tolist() == [1, 0, 1]
    assert g.adjacency[1].tolist() == [True, False, True]
    assert not g.adjacency[0, 2]


def test_knn_k_range():
    with pytest.raises(ValueError, match="k must"):
        build_knn_graph(PointCloud([[0, 0, 0], [1, 0, 0]]), 2)


def test_far_points_keep_edge():
    g = build_knn_graph(PointCloud([[0, 0, 0], [100, 0, 0]]), 1)
    assert g.weights[0, 1] > 0


def test_laplacian_two_node():
    w = 0.3
    L = laplacian(_graph([[0, w], [w, 0]]))
    np.testing.assert_array_equal(L, [[w, -w], [-w, w]])


def test_path_spectrum():
    L = laplacian(_graph([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))
    d = eigendecompose(L, 2)
    np.testing.assert_allclose(d.eigenvalues, [0, 1, 3], atol=1e-12)
    assert d.eigengap == pytest.approx(2.0, abs=1e-12)


def test_two_node_spectrum():
    w = math.exp(-1)
    d = eigendecompose(laplacian(_graph([[0, w], [w, 0]])), 1)
    np.testing.assert_allclose(d.eigenvalues, [0, 2 * w], atol=1e-15)
    assert d.eigenvalues[1] == pytest.approx(0.735759, abs=1e-6)


def test_eigengap_definition():
    assert eigengap(np.array([0, 0.2, 0.5, 0.9]), 2) == pytest.approx(0.3, abs=1e-15)


def test_disconnected_zero_eigenvalues():
    w = np.zeros((5, 5))
    w[0, 1] = w[1, 0] = 1.0
    w[2, 3] = w[3, 2] = 0.5
    w[3, 4] = w[4, 3] = 0.7
    d = eigendecompose(laplacian(_graph(w)), 1)
    assert np.sum(np.abs(d.eigenvalues) < 1e-10) == 2
    # cutting between the two zero modes leaves no gap
    assert "degenerate_eigengap" in d.flags
    assert d.degenerate
    assert not eigendecompose(laplacian(_graph(w)), 2).degenerate


def test_k_equals_n_flag():
    L = laplacian(_graph([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))
    d = eigendecompose(L, 3)
    assert "eigengap_at_K_equals_N" in d.flags
    assert d.eigengap == pytest.approx(2.0)


def test_eigendecompose_errors():
    with pytest.raises(ValueError, match="symmetric"):
        eigendecompose(np.array([[0.0, 1.0], [0.0, 0.0]]), 1)
    with pytest.raises(ValueError, match="K must"):
        eigendecompose(np.eye(2), 3)
    with pytest.raises(ValueError, match="square"):
        eigendecompose(np.ones((2, 3)), 1)


def test_sign_convention_and_determinism(sphere32):
    g, d = spectral_decomposition(sphere32, 6, 8)
    idx = np.argmax(np.abs(d.basis), axis=0)
    assert np.all(d.basis[idx, np.arange(d.n)] > 0)
    _, d2 = spectral_decomposition(sphere32, 6, 8)
    assert np.array_equal(d.basis, d2.basis)
    assert not d.basis.flags.writeable


def test_constant_mode_low_pass(sphere32):
    _, d = spectral_decomposition(sphere32, 6, 8)
    coeffs = np.zeros((d.n, 3))
    coeffs[0] = [1.0, 2.0, 3.0]
    x = inverse_gft(d, coeffs)
    np.testing.assert_allclose(x - x[0], 0.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(8, 40), st.integers(0, 10_000))
def test_spectral_invariants(n, seed):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(rng.standard_normal((n, 3)))
    k = int(rng.integers(1, n))
    g = build_knn_graph(cloud, k)
    w = g.weights
    assert np.max(np.abs(w - w.T)) <= 1e-12
    assert np.all(np.diag(w) == 0)
    assert np.all((w > 0).sum(axis=1) >= k)
    assert np.all(w[w > 0] <= 1.0)
    L = laplacian(g)
    assert np.max(np.abs(L.sum(axis=1))) < 1e-12
    K = int(rng.integers(1, n + 1))
    d = eigendecompose(L, K)
    assert d.eigenvalues[0] <= 1e-8 and d.eigenvalues.min() >= -1e-8
    assert np.max(np.abs(d.basis.T @ d.basis - np.eye(n))) < 1e-8
    assert np.max(np.abs(L @ d.basis - d.basis * d.eigenvalues)) < 1e-6
    assert d.eigengap >= 0 and 1 <= d.K <= n
    x = rng.standard_normal((n, 3))
    xh = gft(d, x)
    assert np.max(np.abs(inverse_gft(d, xh) - x)) < 1e-9
    assert np.max(np.abs(gft(d, inverse_gft(d, x)) - x)) < 1e-9
    assert abs(np.sum(xh**2) - np.sum(x**2)) < 1e-9 * max(1.0, np.sum(x**2))
    assert np.all(gft(d, np.zeros((n, 3))) == 0)
    assert np.all(inverse_gft(d, np.zeros((n, 3))) == 0)


def test_gft_shape_check(sphere32):
    _, d = spectral_decomposition(sphere32, 6, 8)
    with pytest.raises(ValueError, match="rows"):
        gft(d, np.zeros((5, 3)))


def test_dump_spectrum(tmp_path):
    c = generate_shape("cube", 10, 0.0, 1)
    _, d = spectral_decomposition(c, 3, 4)
    path = tmp_path / "s.csv"
    dump_spectrum_csv(d, str(path))
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 1], d.eigenvalues)
    np.testing.assert_array_equal(rows[:, 2:], d.basis.T)
