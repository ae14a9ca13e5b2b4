"""Dense-overlapping spectral windows: band assignment and slice sampling."""
import math
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cloud_io import PointCloud
from .errors import InsufficientBandSupport
from .graph_spectral import gft
from .rng import stream

SIGMA_FACTOR = 0.6
MODES = ("basis", "energy_weighted")


@dataclass(frozen=True)
class BandLayout:
    m: int
    K: int
    centers: np.ndarray
    sigma: float


@dataclass(frozen=True)
class DominantFrequencyProfile:
    nu_star: np.ndarray
    energies: np.ndarray
    mode: str = "basis"


@dataclass(frozen=True)
class SliceSet:
    slices: tuple  # m index arrays, each of length n, in draw order
    memberships: tuple  # per point, sorted tuple of bands containing it
    kappa: int
    seed: int

    @property
    def m(self):
        return len(self.slices)

    @property
    def n(self):
        return len(self.slices[0]) if self.slices else 0

    def multiplicity(self):
        return np.array([len(b) for b in self.memberships], dtype=np.int64)


def spectral_response(decomp, points=None, mode="basis"):
    """Per-point response over the retained frequencies, shape ``(N, K)``.

    ``basis`` uses ``|U[i, v]|^2``.  ``energy_weighted`` multiplies that by
    the energy ``|X_hat[v, :]|^2`` of the coordinate signal at frequency ``v``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    K = decomp.K
    if not 1 <= K <= decomp.n:
        raise ValueError(f"K={K} out of range for N={decomp.n}")
    basis_sq = decomp.basis[:, :K] ** 2
    if mode == "basis":
        return basis_sq
    if points is None:
        raise ValueError("energy_weighted mode needs the point coordinates")
    coeff = gft(decomp, points)[:K]
    return basis_sq * (coeff**2).sum(axis=1)[None, :]


def dominant_frequencies(decomp, cloud, mode="basis"):
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    if pts is not None and np.shape(pts)[0] != decomp.n:
        raise ValueError(f"cloud has {np.shape(pts)[0]} points, decomposition {decomp.n}")
    resp = spectral_response(decomp, pts, mode)
    # np.argmax returns the first maximum, i.e. ties go to the lowest frequency
    return DominantFrequencyProfile(np.argmax(resp, axis=1).astype(np.int64), resp, mode)


def band_layout(K, m, sigma_factor=SIGMA_FACTOR):
    if m < 1 or m > K:
        raise ValueError(f"need 1 <= m <= K (m={m}, K={K})")
    width = K / m
    centers = (np.arange(m) + 0.5) * width
    return BandLayout(int(m), int(K), centers, sigma_factor * width)


def band_weights(profile, layout, normalized=True):
    """Gaussian alignment of each point's dominant frequency with each band, ``(N, m)``.

    With ``normalized`` each column is divided by its sum; a column whose
    weights all underflow to zero is left as zeros.
    """
    nu = np.asarray(profile.nu_star, dtype=np.float64)[:, None]
    gamma = np.exp(-((nu - layout.centers[None, :]) ** 2) / (2.0 * layout.sigma**2))
    if not normalized:
        return gamma
    totals = gamma.sum(axis=0)
    safe = np.where(totals > 0, totals, 1.0)
    return gamma / safe[None, :]


def band_uniforms(seed, band, n):
    return stream(seed, "dosw", int(band)).random(n)


def sample_slices(cloud, weights, n, seed):
    """Draw ``n`` distinct points per band, proportional to the band's weights.

    Each band uses its own random stream derived from ``(seed, band)``.
    """
    w = np.asarray(weights, dtype=np.float64)
    n_points = len(cloud) if cloud is not None else w.shape[0]
    if w.ndim != 2 or w.shape[0] != n_points:
        raise ValueError(f"weights must have shape (N, m) with N={n_points}, got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if n < 1 or n > n_points:
        raise ValueError(f"slice size n must satisfy 1 <= n <= N (n={n}, N={n_points})")
    m = w.shape[1]
    slices = []
    for b in range(m):
        col = np.ascontiguousarray(w[:, b])
        support = int(np.count_nonzero(col > 0))
        if support < n:
            raise InsufficientBandSupport(b, support, n)
        slices.append(kernels.weighted_sample(col, int(n), band_uniforms(seed, b, n)))
    return make_slice_set(slices, n_points, seed)


def make_slice_set(slices, n_points, seed=0):
    members = [[] for _ in range(n_points)]
    for b, idx in enumerate(slices):
        for i in idx:
            members[int(i)].append(b)
    memberships = tuple(tuple(sorted(set(b))) for b in members)
    kappa = max((len(b) for b in memberships), default=0)
    frozen = []
    for idx in slices:
        arr = np.array(idx, dtype=np.int64)
        arr.setflags(write=False)
        frozen.append(arr)
    return SliceSet(tuple(frozen), memberships, int(kappa), int(seed))


def slice_clouds(cloud, slices):
    out = []
    for b, idx in enumerate(slices.slices):
        out.append(PointCloud(cloud.points[idx], label=cloud.label, id=f"{cloud.id}#{b}", scale=cloud.scale))
    return out


def pigeonhole_kappa(m, n, N):
    """Smallest possible overlap multiplicity for ``m`` slices of ``n`` among ``N`` points."""
    return math.ceil(m * n / N)


def dump_slices_csv(cloud, slices, directory):
    """One ``slice_<b>.csv`` per band with index and coordinates."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for b, idx in enumerate(slices.slices):
        path = os.path.join(directory, f"slice_{b:03d}.csv")
        rows = np.column_stack([idx, cloud.points[idx]])
        np.savetxt(path, rows, delimiter=",", header="index,x,y,z", comments="", fmt=["%d", "%.17g", "%.17g", "%.17g"])
        paths.append(path)
    return paths
