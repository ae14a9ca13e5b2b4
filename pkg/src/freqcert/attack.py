"""Frobenius-norm PGD and a simplified randomized-smoothing baseline."""
import math
from dataclasses import dataclass

import numpy as np

from .classifier import extract_features_batch, feature_input_grad_batch
from .cloud_io import PointCloud
from .rng import stream

TARGETS = ("undefended", "freqcert")


@dataclass(frozen=True)
class AttackConfig:
    """PGD settings; ``step_size`` defaults to ``2.5 * epsilon / steps``."""

    epsilon: float
    steps: int = 50
    step_size: float | None = None
    target: str = "undefended"
    seed: int = 0
    random_start: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}")

    @property
    def alpha(self):
        return self.step_size if self.step_size is not None else 2.5 * self.epsilon / self.steps


def project_l2(delta, epsilon):
    """Radial projection onto the Frobenius ball of radius ``epsilon``."""
    norm = float(np.sqrt(np.sum(delta * delta)))
    if norm <= epsilon:
        return delta
    return delta * (epsilon / norm)


def pgd(x0, loss_grad, config):
    """Normalized-gradient ascent on ``loss_grad(x) -> (loss, grad)`` with projection.

    Returns the final iterate and the loss recorded before every step plus
    the final loss.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if config.epsilon == 0:
        return x0.copy(), []
    delta = np.zeros_like(x0)
    if config.random_start:
        d = stream(config.seed, "pgd-start").standard_normal(x0.shape)
        u = stream(config.seed, "pgd-radius").random()
        delta = d / np.linalg.norm(d) * config.epsilon * u ** (1.0 / d.size)
    losses = []
    for _ in range(config.steps):
        loss, grad = loss_grad(x0 + delta)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite attack loss {loss}")
        losses.append(loss)
        gnorm = float(np.sqrt(np.sum(grad * grad)))
        if gnorm == 0.0:
            break
        delta = project_l2(delta + config.alpha * grad / gnorm, config.epsilon)
    loss, _ = loss_grad(x0 + delta)
    losses.append(loss)
    return x0 + delta, losses


def ensemble_loss_grad(model, slices, label):
    """Mean slice cross-entropy with slice membership held fixed."""
    index = np.stack([np.asarray(s, dtype=np.int64) for s in slices])
    labels = np.full(index.shape[0], label)

    def fn(x):
        subs = x[index]
        feats = extract_features_batch(subs)
        # loss_and_grads already averages over the slices
        res = model.loss_and_grads(feats, labels, want_params=False, want_features=True)
        grad = np.zeros_like(x)
        np.add.at(grad, index.ravel(), feature_input_grad_batch(subs, res["features"]).reshape(-1, 3))
        return res["loss"], grad

    return fn


def pgd_attack(cloud, model, pipeline_state=None, config=None, return_losses=False):
    """Attack one labelled cloud; the result is not re-normalized.

    ``target="undefended"`` attacks ``model`` on the whole cloud.
    ``target="freqcert"`` needs ``pipeline_state`` (the clean cloud's
    :class:`~freqcert.pipeline.SlicedCloud`) and attacks the mean loss over
    its frozen slices.
    """
    if cloud.label is None:
        raise ValueError("pgd_attack needs a labelled cloud")
    if config.target == "undefended":
        def fn(x):
            return model.loss_grad_points(x, cloud.label)
    else:
        if pipeline_state is None:
            raise ValueError("the freqcert target needs the clean cloud's slices")
        fn = ensemble_loss_grad(model, pipeline_state.slices.slices, cloud.label)
    adv, losses = pgd(cloud.points, fn, config)
    out = PointCloud(adv, label=cloud.label, id=cloud.id, scale=cloud.scale)
    return (out, losses) if return_losses else out


# ------------------------------------------------------ randomized smoothing

# Acklam's rational approximation to the standard normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_ppf(p):
    """Inverse standard normal CDF (Acklam; relative error below 1.2e-9)."""
    if not 0.0 < p < 1.0:
        if p == 0.5:
            return 0.0
        raise ValueError("p must lie in (0, 1)")
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    if p > 1 - _P_LOW:
        return -norm_ppf(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)


def smoothing_radius(p_top, sigma, n_samples):
    """``sigma * Phi^-1(p)``, zero when ``p <= 0.5``; ``p = 1`` is clamped to ``1 - 1/(2n)``."""
    if p_top <= 0.5:
        return 0.0
    if p_top >= 1.0:
        p_top = 1.0 - 1.0 / (2 * n_samples)
    return sigma * norm_ppf(p_top)


def rs_baseline_predict(cloud, model, sigma=0.5, n_samples=100, seed=0, classify=None):
    """Vote over Gaussian-noised copies of the whole cloud.

    The radius is a point estimate from the empirical top-class frequency,
    without a confidence correction, so it is not a calibrated certificate.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = stream(seed, "rs", cloud.id)
    noise = rng.standard_normal((n_samples,) + cloud.points.shape) * sigma
    if classify is None:
        feats = extract_features_batch(cloud.points[None] + noise)
        preds = np.argmax(model.logits_from_features(feats), axis=1)
    else:
        preds = np.array([classify(cloud.points + e) for e in noise])
    C = model.C if model is not None else int(preds.max()) + 1
    votes = np.bincount(preds, minlength=C)
    top = int(np.argmax(votes))
    return top, smoothing_radius(votes[top] / n_samples, sigma, n_samples)
