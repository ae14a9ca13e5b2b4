"""Brute-force numerical checks of the certification bounds on small clouds.

Every trial draws its randomness from ``stream(seed, check, instance, trial)``
so any single trial can be replayed from its report row.
"""
import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import pipeline as pl
from .certifier import flip_budgets, r_slice, r_star, spectral_margins
from .cloud_io import SHAPES, generate_shape
from .rng import stream

SMALL_PIPELINE = pl.PipelineConfig(k=6, K=8, m=4, n=8)
ASSERTIVE = ("variation_bound", "slice_stability", "flip_budget_consistent")


@dataclass
class Violation:
    check: str
    instance: str
    seed: int
    trial: int
    perturbation_norm: float
    observed: float
    bound: float


@dataclass
class OracleReport:
    check_name: str
    instances_tested: int = 0
    trials: int = 0
    violations: list = field(default_factory=list)
    runtime: float = 0.0
    assertive: bool = True
    topology_changes: int = 0
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.violations

    def summary(self):
        status = ("PASS" if self.passed else "FAIL") if self.assertive else "REPORT"
        return (
            f"{self.check_name}: {status} instances={self.instances_tested} trials={self.trials} "
            f"violations={len(self.violations)} topology_changes={self.topology_changes} "
            f"runtime={self.runtime:.2f}s"
        )


# ------------------------------------------------------------- instances


def describe(kind, n_points, noise, seed, config):
    return (
        f"shape={kind};n_points={n_points};noise={noise!r};seed={seed};"
        f"k={config.k};K={config.K};m={config.m};n={config.n};mode={config.dominant_mode}"
    )


def parse_descriptor(text):
    fields = dict(item.split("=", 1) for item in text.split(";") if item)
    config = pl.PipelineConfig(
        k=int(fields["k"]), K=int(fields["K"]), m=int(fields["m"]), n=int(fields["n"]),
        dominant_mode=fields.get("mode", "basis"),
    )
    cloud = generate_shape(fields["shape"], int(fields["n_points"]), float(fields["noise"]),
                           int(fields["seed"]), id=text)
    return cloud, config


def small_suite(n_seeds=2, n_points=32, noise=0.02, config=SMALL_PIPELINE, base_seed=1000):
    """Noisy synthetic clouds in generic position, as ``(descriptor, cloud, config)``."""
    suite = []
    for kind in SHAPES:
        for s in range(n_seeds):
            desc = describe(kind, n_points, noise, base_seed + s, config)
            cloud, cfg = parse_descriptor(desc)
            suite.append((desc, cloud, cfg))
    return suite


def _random_direction(rng, shape):
    d = rng.standard_normal(shape)
    return d / np.sqrt(np.sum(d * d))


# ---------------------------------------------------- variation inequality


def _variation_trial(seed, trial):
    rng = stream(seed, "variation_bound", trial)
    u = _random_direction(rng, 3)
    p = _random_direction(rng, 3) * rng.random() ** (1 / 3)
    dp = _random_direction(rng, 3) * rng.random() ** (1 / 3)
    lhs = abs((u @ (p + dp)) ** 2 - (u @ p) ** 2)
    e = math.sqrt(float(dp @ dp))
    return lhs, 2 * e + e * e, e


def variation_gap(u, p, dp):
    """``rhs - lhs`` of the per-frequency energy variation inequality."""
    lhs = abs(float(u @ (p + dp)) ** 2 - float(u @ p) ** 2)
    e = float(np.linalg.norm(dp))
    return 2 * e + e * e - lhs


def check_variation_bound(trials=100_000, seed=0, slack=-1e-12):
    """Random unit ``u``, ``|p| <= 1``, ``|dp| <= 1``; asserts the bound holds."""
    t0 = time.perf_counter()
    report = OracleReport("variation_bound", instances_tested=trials, trials=trials)
    min_gap = math.inf
    for t in range(trials):
        lhs, rhs, e = _variation_trial(seed, t)
        gap = rhs - lhs
        min_gap = min(min_gap, gap)
        if gap < slack:
            report.violations.append(Violation("variation_bound", "-", seed, t, e, lhs, rhs))
    report.details["min_slack"] = min_gap
    report.runtime = time.perf_counter() - t0
    return report


# ------------------------------------------------------------ energy gap


def energy_gaps(spectrum):
    """Per point: response at the dominant frequency minus the best other response."""
    e = spectrum.profile.energies
    rows = np.arange(e.shape[0])
    top = e[rows, spectrum.profile.nu_star]
    other = e.copy()
    other[rows, spectrum.profile.nu_star] = -np.inf
    return top - other.max(axis=1)


def check_gap_bound(suite=None, interpretation="other_bands"):
    """Compare the measured minimum energy gap with ``g_i * gap / (4 sqrt(K))``.

    Report only; the bound is not derived rigorously, so violations are
    counted rather than failed.
    """
    t0 = time.perf_counter()
    suite = suite if suite is not None else small_suite()
    report = OracleReport("gap_bound", assertive=False)
    per_cloud = []
    for desc, cloud, cfg in suite:
        spec = pl.analyze(cloud, cfg)
        margins = spectral_margins(spec.profile, spec.layout, interpretation)
        g = np.where(np.isfinite(margins.g), margins.g, 0.0)
        bound = g * spec.decomp.eigengap / (4 * math.sqrt(spec.decomp.K))
        delta = energy_gaps(spec)
        slack = delta - bound
        bad = np.flatnonzero(slack < 0)
        per_cloud.append({"instance": desc, "violation_rate": bad.size / len(cloud), "min_slack": float(slack.min())})
        for i in bad:
            report.violations.append(Violation("gap_bound", desc, 0, int(i), 0.0, float(delta[i]), float(bound[i])))
        report.instances_tested += 1
        report.trials += len(cloud)
    report.details["per_cloud"] = per_cloud
    report.details["violation_rate"] = len(report.violations) / max(report.trials, 1)
    report.runtime = time.perf_counter() - t0
    return report


# ----------------------------------------------------- perturbation trials


def _perturb_and_compare(spectrum, config, radius, seed, check, instance, trial):
    """Recompute the pipeline on a random perturbation of norm ``radius``.

    Returns ``(topology_changed, n_flips, norm)``.
    """
    rng = stream(seed, check, instance, trial)
    cloud = spectrum.cloud
    delta = _random_direction(rng, cloud.points.shape) * radius
    moved = pl.analyze(cloud.with_points(cloud.points + delta), config)
    norm = float(np.sqrt(np.sum(delta * delta)))
    if not np.array_equal(moved.graph.adjacency, spectrum.graph.adjacency):
        return True, 0, norm
    flips = int(np.count_nonzero(moved.profile.nu_star != spectrum.profile.nu_star))
    return False, flips, norm


def slice_radius(spectrum, interpretation="other_bands"):
    margins = spectral_margins(spectrum.profile, spectrum.layout, interpretation)
    return r_slice(margins, spectrum.decomp.eigengap, spectrum.decomp.K), margins


def check_slice_stability(cloud, config, radius_fraction=0.5, trials=1000, seed=0,
                          instance=None, interpretation="other_bands"):
    """Perturb to ``radius_fraction * R_slice`` and require unchanged dominant frequencies."""
    if not 0 < radius_fraction <= 1:
        raise ValueError("radius_fraction must lie in (0, 1]")
    t0 = time.perf_counter()
    instance = instance or cloud.id
    spec = pl.analyze(cloud, config)
    radius, _ = slice_radius(spec, interpretation)
    report = OracleReport("slice_stability", instances_tested=1, trials=trials)
    report.details.update(R_slice=radius, radius=radius_fraction * radius)
    for t in range(trials):
        changed, flips, _ = _perturb_and_compare(
            spec, config, radius_fraction * radius, seed, "slice_stability", instance, t)
        if changed:
            report.topology_changes += 1
        elif flips > 0:
            report.violations.append(Violation("slice_stability", instance, seed, t, radius_fraction * radius, flips, 0))
    report.runtime = time.perf_counter() - t0
    return report


def flip_budget_setup(cloud, config, slice_seed, variant="consistent", interpretation="other_bands"):
    spec = pl.analyze(cloud, config)
    slices = pl.slice_spectrum(spec, slice_seed).slices
    _, p = flip_budgets(spec.params.m, max(slices.kappa, 1), mode="paper")
    p = min(p, len(cloud) - 1)
    margins = spectral_margins(spec.profile, spec.layout, interpretation)
    radius = r_star(margins, spec.decomp.eigengap, spec.decomp.K, p, variant)
    return spec, slices, p, radius


def check_flip_budget(cloud, config, variant="consistent", trials=1000, seed=0, instance=None,
                      fraction=0.99, slice_seed=0, interpretation="other_bands"):
    """Perturb to just below ``R*`` and count dominant-frequency flips against ``p``."""
    t0 = time.perf_counter()
    instance = instance or cloud.id
    spec, slices, p, radius = flip_budget_setup(cloud, config, slice_seed, variant, interpretation)
    name = f"flip_budget_{variant}"
    report = OracleReport(name, instances_tested=1, trials=trials, assertive=variant == "consistent")
    report.details.update(p=p, kappa=slices.kappa, R_star=radius, radius=fraction * radius)
    max_flips = 0
    for t in range(trials):
        changed, flips, _ = _perturb_and_compare(spec, config, fraction * radius, seed, name, instance, t)
        if changed:
            report.topology_changes += 1
            continue
        max_flips = max(max_flips, flips)
        if flips > p:
            report.violations.append(Violation(name, instance, seed, t, fraction * radius, flips, p))
    report.details["max_flips"] = max_flips
    report.runtime = time.perf_counter() - t0
    return report


def tightness_probe(cloud, config, margin_excess=0.0, seed=0, interpretation="other_bands", h=1e-6):
    """Directed perturbation of the smallest-margin point to ``(1 + excess) * R_slice``.

    The direction is the steepest descent of that point's energy gap between
    its dominant frequency and the frequency nearest to the competing band
    center, estimated by central differences through the full pipeline.
    Report only.
    """
    t0 = time.perf_counter()
    spec = pl.analyze(cloud, config)
    radius, margins = slice_radius(spec, interpretation)
    j = int(np.argmin(margins.g))
    nu = int(spec.profile.nu_star[j])
    centers = spec.layout.centers
    dist = np.abs(nu - centers)
    if interpretation == "other_bands" and centers.size > 1:
        dist[np.argmin(dist)] = np.inf
    rival_center = centers[int(np.argmin(dist))]
    rival = int(np.clip(np.rint(rival_center), 0, spec.decomp.K - 1))
    if rival == nu:
        rival = nu + 1 if nu + 1 < spec.decomp.K else nu - 1

    def gap(points):
        e = pl.analyze(cloud.with_points(points), config).profile.energies
        return e[j, nu] - e[j, rival]

    grad = np.zeros(3)
    for a in range(3):
        step = np.zeros_like(cloud.points)
        step[j, a] = h
        grad[a] = (gap(cloud.points + step) - gap(cloud.points - step)) / (2 * h)
    norm = np.linalg.norm(grad)
    direction = -grad / norm if norm > 0 else _random_direction(stream(seed, "tightness", cloud.id), 3)
    size = (1.0 + margin_excess) * radius
    delta = np.zeros_like(cloud.points)
    delta[j] = size * direction
    moved = pl.analyze(cloud.with_points(cloud.points + delta), config)
    flipped = bool(moved.profile.nu_star[j] != nu)
    report = OracleReport("tightness_probe", instances_tested=1, trials=1, assertive=False)
    realized = float(np.sqrt(np.sum(delta * delta)))
    report.details.update(
        point=j, nu_star=nu, rival=rival, R_slice=radius, realized_norm=realized,
        ratio=realized / radius if radius > 0 else math.nan, flipped=flipped,
        new_nu_star=int(moved.profile.nu_star[j]),
        any_flip=bool(np.any(moved.profile.nu_star != spec.profile.nu_star)),
        topology_changed=not np.array_equal(moved.graph.adjacency, spec.graph.adjacency),
    )
    report.runtime = time.perf_counter() - t0
    return report


# ------------------------------------------------------------------ suite


def merge(reports, name, assertive=True):
    out = OracleReport(name, assertive=assertive)
    for r in reports:
        out.instances_tested += r.instances_tested
        out.trials += r.trials
        out.violations.extend(r.violations)
        out.topology_changes += r.topology_changes
        out.runtime += r.runtime
    out.details["per_instance"] = [r.details for r in reports]
    if out.trials:
        out.details["topology_change_rate"] = out.topology_changes / out.trials
    return out


def run_suite_check(check, suite, total_trials, seed, **kwargs):
    per = int(math.ceil(total_trials / len(suite)))
    reports = []
    for desc, cloud, cfg in suite:
        if check == "slice_stability":
            reports.append(check_slice_stability(cloud, cfg, trials=per, seed=seed, instance=desc, **kwargs))
        else:
            reports.append(check_flip_budget(cloud, cfg, trials=per, seed=seed, instance=desc, **kwargs))
    name = check if check == "slice_stability" else f"flip_budget_{kwargs.get('variant', 'consistent')}"
    return merge(reports, name, assertive=name in ASSERTIVE)


def replay(row):
    """Recompute the observed quantity of one violation row (a dict or CSV line)."""
    if isinstance(row, str):
        row = next(csv.DictReader([",".join(VIOLATION_COLUMNS), row]))
    check, seed, trial = row["check"], int(row["seed"]), int(row["trial"])
    if check == "variation_bound":
        lhs, _, _ = _variation_trial(seed, trial)
        return lhs
    cloud, config = parse_descriptor(row["instance"])
    spec = pl.analyze(cloud, config)
    if check == "gap_bound":
        return float(energy_gaps(spec)[trial])
    if check == "slice_stability" or check.startswith("flip_budget_"):
        # perturbation_norm holds the exact target radius of the trial
        radius = float(row["perturbation_norm"])
    else:
        raise ValueError(f"cannot replay check {check!r}")
    _, flips, _ = _perturb_and_compare(spec, config, radius, seed, check, row["instance"], trial)
    return float(flips)


VIOLATION_COLUMNS = ("check", "instance", "seed", "trial", "perturbation_norm", "observed", "bound")


def write_violations(reports, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(VIOLATION_COLUMNS)
        for r in reports:
            for v in r.violations:
                w.writerow([v.check, v.instance, v.seed, v.trial, repr(v.perturbation_norm),
                            repr(float(v.observed)), repr(float(v.bound))])
