"""Slice-level classifiers: permutation-invariant features, a nearest-centroid
model and a one-hidden-layer MLP, plus training with d-OSW slices."""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import pipeline as pl
from .rng import stream

log = logging.getLogger(__name__)

N_BINS = 16
N_FEATURES = 31
HIDDEN = 32
FD_STEP = 1e-4
KINDS = ("centroid", "tiny_mlp")
FORMAT_VERSION = 1

# feature layout
MEAN, STD, MIN, MAX = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)
R_MEAN, R_STD, R_MAX = 12, 13, 14
HIST = slice(15, 31)


def _bins(r):
    return np.minimum((np.clip(r, 0.0, 1.0) * N_BINS).astype(np.int64), N_BINS - 1)


def extract_features_batch(x):
    """Features of ``B`` equal-size point sets given as a ``(B, n, 3)`` array."""
    x = np.asarray(x, dtype=np.float64)
    bsz, n = x.shape[0], x.shape[1]
    if n == 0:
        raise ValueError("cannot extract features from an empty sub-cloud")
    # sorting makes every reduction independent of the input order, bit for bit
    xs = np.sort(x, axis=1)
    r = np.sort(np.sqrt((x * x).sum(axis=2)), axis=1)
    f = np.empty((bsz, N_FEATURES))
    f[:, MEAN] = xs.mean(axis=1)
    f[:, STD] = xs.std(axis=1)
    f[:, MIN] = xs[:, 0]
    f[:, MAX] = xs[:, -1]
    f[:, R_MEAN] = r.mean(axis=1)
    f[:, R_STD] = r.std(axis=1)
    f[:, R_MAX] = r[:, -1]
    hist = np.zeros((bsz, N_BINS))
    np.add.at(hist, (np.repeat(np.arange(bsz), n), _bins(r).ravel()), 1.0)
    f[:, HIST] = hist / n
    return f


def extract_features(sub_cloud):
    """31 order-independent statistics of a point set.

    Per-axis mean, std, min and max; mean, std and max of the point norms;
    a 16-bin histogram of the norms over [0, 1] (fractions; norms above 1 land
    in the last bin).
    """
    x = sub_cloud.points if hasattr(sub_cloud, "points") else np.asarray(sub_cloud, dtype=np.float64)
    return extract_features_batch(x[None])[0]


def _other_extreme(v, largest):
    """For every entry, the extreme of its column over all *other* rows (axis 1)."""
    n = v.shape[1]
    if n == 1:
        return np.full_like(v, -np.inf if largest else np.inf)
    order = np.argsort(v, axis=1, kind="stable")
    first = order[:, -1:] if largest else order[:, :1]
    second = order[:, -2:-1] if largest else order[:, 1:2]
    best = np.take_along_axis(v, first, axis=1)
    runner = np.take_along_axis(v, second, axis=1)
    rows = np.arange(n).reshape((1, n) + (1,) * (v.ndim - 2))
    return np.where(rows == first, runner, best)


def feature_input_grad_batch(x, dloss_dfeat, h=FD_STEP):
    """Pull ``dL/df`` back to ``dL/dX`` for ``B`` point sets, ``(B, n, 3)``.

    Mean, std and norm mean/std are differentiated analytically.  Min, max,
    norm max and the histogram use central differences with step ``h``; only
    the moved point changes those statistics, so each difference is computed
    locally.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(dloss_dfeat, dtype=np.float64)[:, None, :]
    n = x.shape[1]
    out = np.broadcast_to(g[:, :, MEAN] / n, x.shape).copy()
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    safe_sd = np.where(sd > 0, sd, 1.0)
    out += g[:, :, STD] * np.where(sd > 0, (x - mu) / (n * safe_sd), 0.0)

    r = np.sqrt((x * x).sum(axis=2))
    unit = np.divide(x, r[:, :, None], out=np.zeros_like(x), where=r[:, :, None] > 0)
    out += g[:, :, R_MEAN, None] * unit / n
    r_sd = r.std(axis=1, keepdims=True)
    dr_sd = np.where(r_sd > 0, (r - r.mean(axis=1, keepdims=True)) / (n * np.where(r_sd > 0, r_sd, 1.0)), 0.0)
    out += (g[:, :, R_STD] * dr_sd)[:, :, None] * unit

    two_h = 2.0 * h
    other_max = _other_extreme(x, largest=True)
    other_min = _other_extreme(x, largest=False)
    out += g[:, :, MAX] * (np.maximum(x + h, other_max) - np.maximum(x - h, other_max)) / two_h
    out += g[:, :, MIN] * (np.minimum(x + h, other_min) - np.minimum(x - h, other_min)) / two_h

    r2 = (r * r)[:, :, None]
    r_plus = np.sqrt(np.maximum(r2 + 2.0 * h * x + h * h, 0.0))
    r_minus = np.sqrt(np.maximum(r2 - 2.0 * h * x + h * h, 0.0))
    other_rmax = _other_extreme(r, largest=True)[:, :, None]
    out += g[:, :, R_MAX, None] * (np.maximum(r_plus, other_rmax) - np.maximum(r_minus, other_rmax)) / two_h

    gh = g[:, 0, HIST]
    rows = np.arange(x.shape[0])[:, None, None]
    out += (gh[rows, _bins(r_plus)] - gh[rows, _bins(r_minus)]) / (n * two_h)
    return out


def feature_input_grad(points, dloss_dfeat, h=FD_STEP):
    """Single point-set version of :func:`feature_input_grad_batch`."""
    x = np.asarray(points, dtype=np.float64)
    return feature_input_grad_batch(x[None], np.asarray(dloss_dfeat)[None], h)[0]


# -------------------------------------------------------------------- model


@dataclass
class ClassifierModel:
    kind: str
    parameters: np.ndarray
    C: int
    feature_spec: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.parameters = np.asarray(self.parameters, dtype=np.float64)
        spec = {"name": "radial31", "length": N_FEATURES, "hidden": HIDDEN}
        spec.update(self.feature_spec)
        spec["mean"] = np.asarray(spec.get("mean", np.zeros(N_FEATURES)), dtype=np.float64)
        spec["scale"] = np.asarray(spec.get("scale", np.ones(N_FEATURES)), dtype=np.float64)
        self.feature_spec = spec
        expected = n_parameters(self.kind, self.C, spec["hidden"])
        if self.parameters.shape != (expected,):
            raise ValueError(f"{self.kind} with C={self.C} needs {expected} parameters, got {self.parameters.shape}")

    # -- parameter views
    def unpack(self, theta=None):
        theta = self.parameters if theta is None else theta
        C, H, D = self.C, self.feature_spec["hidden"], N_FEATURES
        if self.kind == "centroid":
            return (theta.reshape(C, D),)
        i = 0
        w1 = theta[i : i + H * D].reshape(H, D); i += H * D
        b1 = theta[i : i + H]; i += H
        w2 = theta[i : i + C * H].reshape(C, H); i += C * H
        b2 = theta[i : i + C]
        return w1, b1, w2, b2

    def standardize(self, feats):
        return (feats - self.feature_spec["mean"]) / self.feature_spec["scale"]

    # -- forward / backward on feature rows
    def logits_from_features(self, feats, theta=None):
        z = self.standardize(np.atleast_2d(feats))
        if self.kind == "centroid":
            (cent,) = self.unpack(theta)
            d = z[:, None, :] - cent[None, :, :]
            return -(d * d).sum(axis=2)
        w1, b1, w2, b2 = self.unpack(theta)
        return np.tanh(z @ w1.T + b1) @ w2.T + b2

    def loss_and_grads(self, feats, labels, theta=None, want_params=True, want_features=False):
        """Mean cross-entropy over the rows and its gradients."""
        feats = np.atleast_2d(feats)
        labels = np.asarray(labels, dtype=np.int64)
        z = self.standardize(feats)
        b = z.shape[0]
        if self.kind == "centroid":
            (cent,) = self.unpack(theta)
            diff = z[:, None, :] - cent[None, :, :]
            logits = -(diff * diff).sum(axis=2)
        else:
            w1, b1, w2, b2 = self.unpack(theta)
            hid = np.tanh(z @ w1.T + b1)
            logits = hid @ w2.T + b2
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = -logp[np.arange(b), labels].mean()
        dlogits = np.exp(logp)
        dlogits[np.arange(b), labels] -= 1.0
        dlogits /= b
        out = {"loss": float(loss), "logits": logits}
        if self.kind == "centroid":
            # logits_c = -|z - c|^2
            if want_params:
                out["params"] = (2.0 * (dlogits[:, :, None] * diff).sum(axis=0)).ravel()
            if want_features:
                dz = -2.0 * (dlogits[:, :, None] * diff).sum(axis=1)
                out["features"] = dz / self.feature_spec["scale"]
            return out
        dhid = dlogits @ w2
        dpre = dhid * (1.0 - hid * hid)
        if want_params:
            out["params"] = np.concatenate(
                [(dpre.T @ z).ravel(), dpre.sum(axis=0), (dlogits.T @ hid).ravel(), dlogits.sum(axis=0)]
            )
        if want_features:
            out["features"] = (dpre @ w1) / self.feature_spec["scale"]
        return out

    # -- point-level interface used by the attacks
    def loss_grad_points(self, points, label):
        """Cross-entropy of one point set and its gradient w.r.t. the coordinates."""
        f = extract_features(points)
        res = self.loss_and_grads(f, [label], want_params=False, want_features=True)
        return res["loss"], feature_input_grad(points, res["features"][0])


def n_parameters(kind, C, hidden=HIDDEN):
    if kind == "centroid":
        return C * N_FEATURES
    return hidden * N_FEATURES + hidden + C * hidden + C


def init_model(kind, C, seed=0, feature_spec=None, zero=False):
    size = n_parameters(kind, C)
    if zero:
        theta = np.zeros(size)
    elif kind == "centroid":
        theta = np.zeros(size)
    else:
        rng = stream(seed, "init", kind)
        theta = np.concatenate([
            rng.standard_normal(HIDDEN * N_FEATURES) / np.sqrt(N_FEATURES),
            np.zeros(HIDDEN),
            rng.standard_normal(C * HIDDEN) / np.sqrt(HIDDEN),
            np.zeros(C),
        ])
    return ClassifierModel(kind, theta, C, feature_spec or {}, seed)


def predict(model, sub_cloud):
    """(class, logits) for one sub-cloud; ties go to the lowest class."""
    f = extract_features(sub_cloud)
    if f.shape[0] != model.feature_spec["length"]:
        raise ValueError("feature length does not match the model")
    logits = model.logits_from_features(f)[0]
    return int(np.argmax(logits)), logits


def predict_many(model, sub_clouds):
    feats = extract_features_batch(np.stack([c.points for c in sub_clouds]))
    return np.argmax(model.logits_from_features(feats), axis=1)


# ----------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "tiny_mlp"
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def slice_feature_matrix(spectra, train_seed, epoch):
    """Features of every slice of every sample for one epoch, in sample order."""
    feats, owners = [], []
    for j, spec in enumerate(spectra):
        seed = pl.sample_seed(train_seed, spec.cloud.id, "train", epoch)
        sliced = pl.slice_spectrum(spec, seed)
        feats.append(extract_features_batch(np.stack([c.points for c in sliced.sub_clouds])))
        owners.extend([j] * len(sliced.sub_clouds))
    return np.concatenate(feats), np.array(owners, dtype=np.int64)


def train(dataset, pipeline=None, config=None, spectra=None):
    """Fit a model on d-OSW slices (or whole clouds when ``pipeline`` is None).

    Each slice is an independent training instance carrying its parent's
    label.  Slices are redrawn every epoch with seeds derived from
    ``(config.seed, epoch, sample id)``.
    """
    config = config or TrainConfig()
    C = len(dataset.class_names)
    labels = dataset.labels
    if len(dataset) == 0:
        raise ValueError("empty training set")
    missing = sorted(set(range(C)) - set(labels.tolist()))
    if missing:
        raise ValueError(f"classes without training samples: {missing}")

    if pipeline is not None and spectra is None:
        spectra = [pl.analyze(s, pipeline) for s in dataset.samples]

    def epoch_data(epoch):
        if pipeline is None:
            return np.stack([extract_features(s) for s in dataset.samples]), labels
        feats, owners = slice_feature_matrix(spectra, config.seed, epoch)
        return feats, labels[owners]

    feats, y = epoch_data(0)
    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale = np.where(scale > 1e-8, scale, 1.0)
    spec = {"mean": mean, "scale": scale, "sliced": pipeline is not None}
    model = init_model(config.kind, C, config.seed, spec)

    if config.kind == "centroid":
        z = model.standardize(feats)
        cent = np.stack([z[y == c].mean(axis=0) for c in range(C)])
        model.parameters = cent.ravel()
        return model

    theta = model.parameters.copy()
    history = []
    for epoch in range(config.epochs):
        if epoch > 0:
            feats, y = epoch_data(epoch)
        order = stream(config.seed, "shuffle", epoch).permutation(len(y))
        total = 0.0
        for start in range(0, len(y), config.batch_size):
            batch = order[start : start + config.batch_size]
            res = model.loss_and_grads(feats[batch], y[batch], theta)
            theta -= config.learning_rate * res["params"]
            total += res["loss"] * len(batch)
        history.append(total / len(y))
        log.debug("epoch %d: mean batch loss %.4f", epoch, history[-1])
    model.parameters = theta
    model.feature_spec["history"] = history
    return model


def accuracy(model, feats, labels):
    return float(np.mean(np.argmax(model.logits_from_features(feats), axis=1) == np.asarray(labels)))


# ---------------------------------------------------------------- save/load


def save_model(model, path):
    """Text format: ``#key=value`` header lines followed by one parameter per line."""
    spec = model.feature_spec
    lines = [
        f"#freqcert-model={FORMAT_VERSION}",
        f"#kind={model.kind}",
        f"#C={model.C}",
        f"#seed={model.seed}",
        f"#feature_spec={spec['name']}:{spec['length']}:{spec['hidden']}",
        "#feature_mean=" + ",".join(repr(float(v)) for v in spec["mean"]),
        "#feature_scale=" + ",".join(repr(float(v)) for v in spec["scale"]),
    ]
    lines += [repr(float(v)) for v in model.parameters]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    header, params = {}, []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                header[key] = value
            else:
                params.append(float(line))
    version = int(header.get("freqcert-model", -1))
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    name, length, hidden = header["feature_spec"].split(":")
    spec = {
        "name": name,
        "length": int(length),
        "hidden": int(hidden),
        "mean": np.array([float(v) for v in header["feature_mean"].split(",")]),
        "scale": np.array([float(v) for v in header["feature_scale"].split(",")]),
    }
    return ClassifierModel(header["kind"], np.array(params), int(header["C"]), spec, int(header["seed"]))
