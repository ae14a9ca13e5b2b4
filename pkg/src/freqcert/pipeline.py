"""Graph -> spectrum -> d-OSW slices for one cloud, with parameter clamping."""
import logging
from dataclasses import dataclass, field

from .dosw import band_layout, band_weights, dominant_frequencies, sample_slices, slice_clouds
from .graph_spectral import build_knn_graph, eigendecompose, laplacian
from .rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Spectral and slicing parameters.

    Defaults follow the published setting (k=20, K=128, m=32, n=128).
    :meth:`resolve` clamps them for small clouds: ``k`` and ``K`` to
    ``N - 1``, ``m`` to ``K`` and ``n`` to ``N // 4``.
    """

    k: int = 20
    K: int = 128
    m: int = 32
    n: int = 128
    sigma_factor: float = 0.6
    dominant_mode: str = "basis"

    def resolve(self, n_points):
        flags = []
        k = self.k
        if k > n_points - 1:
            k = n_points - 1
            flags.append(f"k_clamped_to_{k}")
        K = self.K
        if K > n_points - 1:
            K = max(1, n_points - 1)
            flags.append(f"K_clamped_to_{K}")
        m = self.m
        if m > K:
            m = K
            flags.append(f"m_clamped_to_{m}")
        n = self.n
        limit = max(1, n_points // 4)
        if n > limit:
            n = limit
            flags.append(f"n_clamped_to_{n}")
        if flags:
            log.debug("pipeline parameters clamped for N=%d: %s", n_points, ", ".join(flags))
        return ResolvedParams(k, K, m, n, self.sigma_factor, self.dominant_mode, tuple(flags))


@dataclass(frozen=True)
class ResolvedParams:
    k: int
    K: int
    m: int
    n: int
    sigma_factor: float
    dominant_mode: str
    flags: tuple = ()


@dataclass(frozen=True)
class Spectrum:
    """Seed-independent part of the pipeline for one cloud."""

    cloud: object
    params: ResolvedParams
    graph: object
    decomp: object
    profile: object
    layout: object
    weights: object


@dataclass(frozen=True)
class SlicedCloud:
    spectrum: Spectrum
    slices: object
    sub_clouds: list = field(default_factory=list)

    @property
    def flags(self):
        return self.spectrum.params.flags + self.spectrum.decomp.flags


def analyze(cloud, config):
    params = config.resolve(len(cloud))
    graph = build_knn_graph(cloud, params.k)
    decomp = eigendecompose(laplacian(graph), params.K)
    profile = dominant_frequencies(decomp, cloud, params.dominant_mode)
    layout = band_layout(params.K, params.m, params.sigma_factor)
    weights = band_weights(profile, layout)
    return Spectrum(cloud, params, graph, decomp, profile, layout, weights)


def slice_spectrum(spectrum, seed):
    slices = sample_slices(spectrum.cloud, spectrum.weights, spectrum.params.n, seed)
    return SlicedCloud(spectrum, slices, slice_clouds(spectrum.cloud, slices))


def run(cloud, config, seed):
    return slice_spectrum(analyze(cloud, config), seed)


def sample_seed(master_seed, sample_id, *labels):
    """Slicing seed for one sample, derived from the master seed and its id."""
    return int(stream(master_seed, "slice-seed", str(sample_id), *labels).integers(0, 2**63 - 1))
