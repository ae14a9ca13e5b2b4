"""kNN graphs, combinatorial Laplacians and the graph Fourier transform."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EigenSolverError

DEGENERATE_GAP = 1e-10


@dataclass(frozen=True)
class KnnGraph:
    n: int
    k: int
    weights: np.ndarray
    neighbors: np.ndarray  # (n, k) directed selections before symmetrization

    @property
    def degrees(self):
        return self.weights.sum(axis=1)

    @property
    def adjacency(self):
        return self.weights > 0


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ascending eigenvalues, eigenvectors as columns, and the cut at ``K``.

    ``eigengap`` is ``eigenvalues[K] - eigenvalues[K-1]``.  With ``K == N``
    there is no first discarded eigenvalue; the top gap is used instead and
    ``"eigengap_at_K_equals_N"`` is added to ``flags``.
    """

    eigenvalues: np.ndarray
    basis: np.ndarray
    K: int
    eigengap: float
    flags: tuple = field(default_factory=tuple)

    @property
    def n(self):
        return self.eigenvalues.shape[0]

    @property
    def degenerate(self):
        return self.eigengap < DEGENERATE_GAP

    def retained(self):
        return self.basis[:, : self.K]


def pairwise_sq_dists(points):
    pts = np.asarray(points, dtype=np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    return (diff * diff).sum(axis=-1)


def build_knn_graph(cloud, k):
    """Union-symmetrized kNN graph with weights ``exp(-|p_i - p_j|^2)``."""
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    d2 = np.ascontiguousarray(pairwise_sq_dists(pts))
    nbrs = kernels.knn_select(d2, int(k))
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), k), nbrs.ravel()] = True
    mask |= mask.T
    w = np.where(mask, np.exp(-d2), 0.0)
    # exp(-0) = 1 for coincident points; exp of a huge distance may underflow,
    # keep such edges at the smallest positive double so the edge set is intact
    w[mask & (w == 0.0)] = np.finfo(np.float64).tiny
    w = 0.5 * (w + w.T)
    return KnnGraph(n=n, k=int(k), weights=w, neighbors=nbrs)


def laplacian(graph):
    """``L = D - W``."""
    w = graph.weights
    return np.diag(w.sum(axis=1)) - w


def _fix_signs(u):
    """Flip columns so the largest-magnitude entry (lowest index on ties) is positive."""
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs


def eigendecompose(L, K):
    """Full symmetric eigendecomposition with deterministic signs."""
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    if L.ndim != 2 or L.shape[1] != n:
        raise ValueError(f"expected a square matrix, got {L.shape}")
    asym = float(np.max(np.abs(L - L.T))) if n else 0.0
    if asym > 1e-10:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    if not 1 <= K <= n:
        raise ValueError(f"K must satisfy 1 <= K <= N (K={K}, N={n})")
    try:
        lam, u = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(str(exc)) from exc
    u = _fix_signs(u)
    flags = []
    if K < n:
        gap = lam[K] - lam[K - 1]
    elif n >= 2:
        gap = lam[n - 1] - lam[n - 2]
        flags.append("eigengap_at_K_equals_N")
    else:
        gap = 0.0
        flags.append("eigengap_at_K_equals_N")
    gap = max(float(gap), 0.0)
    if gap < DEGENERATE_GAP:
        flags.append("degenerate_eigengap")
    lam.setflags(write=False)
    u.setflags(write=False)
    return SpectralDecomposition(lam, u, int(K), gap, tuple(flags))


def eigengap(eigenvalues, K):
    """``lambda_K - lambda_{K-1}`` for a sorted spectrum."""
    return float(eigenvalues[K] - eigenvalues[K - 1])


def _check_rows(decomp, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != decomp.n:
        raise ValueError(f"signal must have {decomp.n} rows, got shape {x.shape}")
    return x


def gft(decomp, x):
    """Graph Fourier coefficients ``U^T X``."""
    return decomp.basis.T @ _check_rows(decomp, x)


def inverse_gft(decomp, coeffs):
    """Signal ``U X_hat``."""
    return decomp.basis @ _check_rows(decomp, coeffs)


def spectral_decomposition(cloud, k, K):
    """Graph, Laplacian and decomposition of a cloud in one call."""
    graph = build_knn_graph(cloud, k)
    return graph, eigendecompose(laplacian(graph), K)


def dump_spectrum_csv(decomp, path):
    """Write ``lambda`` followed by the eigenvector entries, one eigenpair per row."""
    n = decomp.n
    header = "index,eigenvalue," + ",".join(f"u{i}" for i in range(n))
    rows = np.column_stack([np.arange(n), decomp.eigenvalues, decomp.basis.T])
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")
