"""Spectral margins, majority voting and certified l2 radii."""
import math
from dataclasses import dataclass, field

import numpy as np

from .dosw import dominant_frequencies
from .graph_spectral import DEGENERATE_GAP

INTERPRETATIONS = ("other_bands", "all_bands")
BUDGET_MODES = ("paper", "gap_aware")
RSTAR_VARIANTS = ("consistent", "published")
RADII = ("r_slice", "r_star_consistent", "r_star_published")
THREATS = ("frobenius", "per_point")


@dataclass(frozen=True)
class MarginProfile:
    g: np.ndarray
    g_min: float
    g_sorted: np.ndarray
    interpretation: str
    flags: tuple = ()

    @property
    def unbounded(self):
        return math.isinf(self.g_min)


@dataclass(frozen=True)
class CertifyConfig:
    interpretation: str = "other_bands"
    budget_mode: str = "paper"
    radius: str = "r_star_consistent"
    threat: str = "frobenius"
    dominant_mode: str = "basis"

    def __post_init__(self):
        for name, allowed in (
            ("interpretation", INTERPRETATIONS),
            ("budget_mode", BUDGET_MODES),
            ("radius", RADII),
            ("threat", THREATS),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class Certificate:
    id: str
    label: int | None
    prediction: int
    votes: np.ndarray
    R_slice: float
    R_star_published: float
    R_star_consistent: float
    alpha: int
    p: int
    kappa: int
    g_min: float
    eigengap: float
    K: int
    m: int
    n_points: int
    scale: float = 1.0
    budget_mode: str = "paper"
    flags: tuple = ()
    config: CertifyConfig = field(default_factory=CertifyConfig)

    @property
    def correct(self):
        return self.label is not None and self.prediction == self.label

    def radius(self, which=None, threat=None):
        """Selected radius in normalized units under the chosen threat model.

        ``per_point`` converts a Frobenius radius ``R`` to the per-point ball
        radius ``R / sqrt(N)``.
        """
        which = which or self.config.radius
        threat = threat or self.config.threat
        r = {"r_slice": self.R_slice, "r_star_consistent": self.R_star_consistent,
             "r_star_published": self.R_star_published}[which]
        return r / math.sqrt(self.n_points) if threat == "per_point" else r

    def radius_original_units(self, which=None, threat=None):
        return self.radius(which, threat) / self.scale

    def certified_at(self, eps, which=None, threat=None):
        return eps < self.radius(which, threat)


def spectral_margins(profile, layout, interpretation="other_bands"):
    """Distance from each dominant frequency to the nearest (competing) band center.

    ``all_bands`` takes the minimum over every center.  ``other_bands``
    skips the point's own nearest center (lower band on ties); with a single
    band there is no competitor and the margin is ``inf``, flagged.
    """
    if interpretation not in INTERPRETATIONS:
        raise ValueError(f"interpretation must be one of {INTERPRETATIONS}")
    nu = np.asarray(profile.nu_star if hasattr(profile, "nu_star") else profile, dtype=np.float64)
    dist = np.abs(nu[:, None] - layout.centers[None, :])
    flags = ()
    if interpretation == "all_bands":
        g = dist.min(axis=1)
    elif layout.m == 1:
        g = np.full(nu.shape[0], np.inf)
        flags = ("single_band_no_competitor",)
    else:
        own = np.argmin(dist, axis=1)
        masked = dist.copy()
        masked[np.arange(nu.shape[0]), own] = np.inf
        g = masked.min(axis=1)
    g_sorted = np.sort(g, kind="stable")
    return MarginProfile(g, float(g_sorted[0]), g_sorted, interpretation, flags)


def majority_vote(slice_predictions, C):
    """Vote tally and winner; ties go to the lowest class index."""
    preds = np.asarray(slice_predictions, dtype=np.int64)
    if preds.size < 1:
        raise ValueError("need at least one slice prediction")
    if preds.min() < 0 or preds.max() >= C:
        raise ValueError(f"slice predictions must lie in [0, {C})")
    votes = np.bincount(preds, minlength=C)
    return int(np.argmax(votes)), votes


def _finite_or_zero(margins, eigengap):
    return eigengap >= DEGENERATE_GAP and not margins.unbounded


def _threshold_factor(eigengap, K):
    # shared by every radius so their ordering survives rounding
    return eigengap / (4.0 * math.sqrt(K))


def r_slice(margins, eigengap, K):
    """``g_min * gap / (4 sqrt(K))``; zero for a degenerate gap or unbounded margins."""
    if not _finite_or_zero(margins, eigengap):
        return 0.0
    return margins.g_min * _threshold_factor(eigengap, K)


def flip_budgets(m, kappa, votes=None, mode="paper"):
    """Slice-flip budget ``alpha`` and point-flip budget ``p = alpha // kappa``.

    ``paper`` ignores the tally.  ``gap_aware`` returns the largest number of
    winner votes that can move to the runner-up while the winner still leads
    strictly.
    """
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    if mode == "paper":
        alpha = (m - 1) // 2
    elif mode == "gap_aware":
        tally = np.sort(np.asarray(votes, dtype=np.int64))[::-1]
        if tally.sum() != m:
            raise ValueError(f"votes sum to {tally.sum()}, expected m={m}")
        runner = int(tally[1]) if tally.size > 1 else 0
        alpha = max(0, -(-(int(tally[0]) - runner) // 2) - 1)
    else:
        raise ValueError(f"mode must be one of {BUDGET_MODES}")
    return alpha, alpha // kappa


def r_star(margins, eigengap, K, p, variant="consistent"):
    """Radius tolerating ``p`` dominant-frequency flips.

    Both variants scale ``S = sqrt(sum of the p+1 smallest squared margins)``:
    ``published`` by ``gap * sqrt(K) / 8``, ``consistent`` by the per-point
    threshold factor ``gap / (4 sqrt(K))``.
    """
    if variant not in RSTAR_VARIANTS:
        raise ValueError(f"variant must be one of {RSTAR_VARIANTS}")
    if p + 1 > margins.g_sorted.shape[0]:
        raise ValueError(f"p + 1 = {p + 1} exceeds the number of points {margins.g_sorted.shape[0]}")
    if not _finite_or_zero(margins, eigengap):
        return 0.0
    s = math.sqrt(float(np.sum(margins.g_sorted[: p + 1] ** 2)))
    r = _threshold_factor(eigengap, K) * s
    if variant == "published":
        # gap * sqrt(K) / 8 = gap / (4 sqrt(K)) * K / 2
        return r * (K / 2.0)
    return r


def certify_sample(cloud, decomp, layout, slices, slice_predictions, config=None, C=None, profile=None, extra_flags=()):
    """Vote, margins, budgets and all three radii for one sample."""
    config = config or CertifyConfig()
    if profile is None:
        profile = dominant_frequencies(decomp, cloud, config.dominant_mode)
    if C is None:
        C = int(max(slice_predictions)) + 1
    prediction, votes = majority_vote(slice_predictions, C)
    margins = spectral_margins(profile, layout, config.interpretation)
    m = len(slice_predictions)
    kappa = max(slices.kappa, 1)
    alpha, p = flip_budgets(m, kappa, votes, config.budget_mode)
    p_eff = min(p, len(cloud) - 1)
    flags = list(extra_flags) + list(decomp.flags) + list(margins.flags)
    if p_eff != p:
        flags.append("p_clamped_to_N_minus_1")
    if config.budget_mode == "gap_aware":
        flags.append("gap_aware_budget_extension")
    if margins.unbounded:
        flags.append("radii_zero_unbounded_margin")
    if decomp.degenerate:
        flags.append("radii_zero_degenerate_eigengap")
    gap = decomp.eigengap
    return Certificate(
        id=cloud.id,
        label=cloud.label,
        prediction=prediction,
        votes=votes,
        R_slice=r_slice(margins, gap, decomp.K),
        R_star_published=r_star(margins, gap, decomp.K, p_eff, "published"),
        R_star_consistent=r_star(margins, gap, decomp.K, p_eff, "consistent"),
        alpha=alpha,
        p=p_eff,
        kappa=kappa,
        g_min=margins.g_min,
        eigengap=gap,
        K=decomp.K,
        m=m,
        n_points=len(cloud),
        scale=cloud.scale,
        budget_mode=config.budget_mode,
        flags=tuple(dict.fromkeys(flags)),
        config=config,
    )


CERTIFICATE_COLUMNS = (
    "id", "label", "prediction", "votes", "kappa", "alpha", "p",
    "R_slice", "R_star_published", "R_star_consistent", "flags",
)


def certificate_row(cert):
    return {
        "id": cert.id,
        "label": "" if cert.label is None else cert.label,
        "prediction": cert.prediction,
        "votes": ";".join(str(int(v)) for v in cert.votes),
        "kappa": cert.kappa,
        "alpha": cert.alpha,
        "p": cert.p,
        "R_slice": repr(float(cert.R_slice)),
        "R_star_published": repr(float(cert.R_star_published)),
        "R_star_consistent": repr(float(cert.R_star_consistent)),
        "flags": ";".join(cert.flags),
    }
