"""Experiment configuration: INI sections of ``key = value`` pairs."""
import configparser
import os
from dataclasses import dataclass

from .errors import ConfigError

PUBLISHED = "published method"
ARTIFACT = "artifact default"


def _floats(text):
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if str(text).strip() in ("", "none", "auto") else float(text)


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    default: object
    parse: object
    provenance: str
    doc: str


def _grid(start, stop, step):
    n = int(round((stop - start) / step))
    return tuple(round(start + i * step, 10) for i in range(n + 1))


KEYS = (
    Key("dataset", "source", "synthetic", str, ARTIFACT, "'synthetic' or 'manifest'"),
    Key("dataset", "train_manifest", "", str, ARTIFACT, "path,label manifest for training (source=manifest)"),
    Key("dataset", "test_manifest", "", str, ARTIFACT, "path,label manifest for testing (source=manifest)"),
    Key("dataset", "n_train", 200, int, ARTIFACT, "synthetic training samples"),
    Key("dataset", "n_test", 80, int, ARTIFACT, "synthetic test samples"),
    Key("dataset", "n_points", 128, int, ARTIFACT, "points per synthetic cloud"),
    Key("dataset", "noise_std", 0.02, float, ARTIFACT, "Gaussian jitter of synthetic surfaces"),
    Key("pipeline", "k", 20, int, PUBLISHED, "kNN graph neighbours"),
    Key("pipeline", "K", 128, int, PUBLISHED, "retained frequencies (clamped to N-1)"),
    Key("pipeline", "m", 32, int, PUBLISHED, "bands / slices per cloud"),
    Key("pipeline", "n", 128, int, PUBLISHED, "points per slice (clamped to N//4)"),
    Key("pipeline", "sigma_factor", 0.6, float, PUBLISHED, "band width sigma = factor * K/m"),
    Key("pipeline", "dominant_mode", "basis", str, ARTIFACT, "'basis' or 'energy_weighted'"),
    Key("certify", "interpretation", "other_bands", str, ARTIFACT, "margin rule: 'other_bands' or 'all_bands'"),
    Key("certify", "radius", "r_star_consistent", str, ARTIFACT,
        "radius used for certified accuracy: r_slice, r_star_consistent, r_star_published"),
    Key("certify", "budget_mode", "paper", str, PUBLISHED, "'paper' or 'gap_aware' flip budget"),
    Key("certify", "threat", "frobenius", str, ARTIFACT, "'frobenius' or 'per_point' (R / sqrt(N))"),
    Key("certify", "grid", _grid(0.0, 0.14, 0.02), _floats, ARTIFACT, "certified-accuracy epsilon grid"),
    Key("classifier", "kind", "tiny_mlp", str, ARTIFACT, "'tiny_mlp' or 'centroid'"),
    Key("classifier", "epochs", 30, int, ARTIFACT, "training epochs"),
    Key("classifier", "learning_rate", 0.05, float, ARTIFACT, "SGD learning rate"),
    Key("classifier", "batch_size", 32, int, ARTIFACT, "mini-batch size"),
    Key("attack", "grid", _grid(0.0, 2.0, 0.25), _floats, ARTIFACT, "empirical-accuracy epsilon grid"),
    Key("attack", "steps", 50, int, ARTIFACT, "PGD iterations"),
    Key("attack", "step_size", None, _opt_float, ARTIFACT, "PGD step; empty means 2.5*eps/steps"),
    Key("attack", "dump_adversarial", False, _bool, ARTIFACT, "write adversarial clouds as XYZ"),
    Key("rs", "sigma", 0.5, float, PUBLISHED, "randomized-smoothing noise std"),
    Key("rs", "n_samples", 100, int, ARTIFACT, "noisy copies per prediction"),
    Key("oracle", "in_eval", True, _bool, ARTIFACT, "run the oracle suite as part of 'eval'"),
    Key("oracle", "variation_trials", 100_000, int, ARTIFACT, "trials of the variation inequality"),
    Key("oracle", "stability_trials", 10_000, int, ARTIFACT, "perturbation trials for the stability checks"),
    Key("oracle", "radius_fraction", 0.5, float, ARTIFACT, "fraction of R_slice for the stability check"),
    Key("oracle", "suite_seeds", 2, int, ARTIFACT, "seeds per shape in the small suite"),
    Key("run", "seed", 0, int, ARTIFACT, "master seed"),
    Key("run", "out", "out", str, ARTIFACT, "output directory"),
    Key("run", "workers", 1, int, ARTIFACT, "worker processes for per-sample work"),
)

_BY_NAME = {(k.section, k.name): k for k in KEYS}


class ExperimentConfig:
    """Typed view over the key registry; attribute access is ``cfg.section_name``."""

    def __init__(self, values=None):
        self._values = {(k.section, k.name): k.default for k in KEYS}
        for (section, name), value in (values or {}).items():
            self.set(section, name, value)

    def set(self, section, name, value):
        key = _BY_NAME.get((section, name))
        if key is None:
            valid = ", ".join(f"{s}.{n}" for s, n in _BY_NAME)
            raise ConfigError(f"unknown key {section}.{name}; valid keys: {valid}")
        if isinstance(value, str):
            try:
                value = key.parse(value)
            except ValueError as exc:
                raise ConfigError(f"{section}.{name}: {exc}") from None
        self._values[(section, name)] = value

    def get(self, section, name):
        return self._values[(section, name)]

    def __getattr__(self, attr):
        if attr.startswith("_"):
            raise AttributeError(attr)
        section, _, name = attr.partition("_")
        if (section, name) in self._values:
            return self._values[(section, name)]
        raise AttributeError(attr)

    def to_ini(self):
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for (section, name), value in self._values.items():
            if not parser.has_section(section):
                parser.add_section(section)
            if isinstance(value, tuple):
                text = ",".join(repr(v) for v in value)
            elif value is None:
                text = ""
            else:
                text = str(value)
            parser.set(section, name, text)
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in parser.items(section)]
            lines.append("")
        return "\n".join(lines)

    # -- typed sub-configs
    def pipeline(self):
        from .pipeline import PipelineConfig

        return PipelineConfig(self.pipeline_k, self.pipeline_K, self.pipeline_m, self.pipeline_n,
                              self.pipeline_sigma_factor, self.pipeline_dominant_mode)

    def certify(self):
        from .certifier import CertifyConfig

        return CertifyConfig(self.certify_interpretation, self.certify_budget_mode, self.certify_radius,
                             self.certify_threat, self.pipeline_dominant_mode)

    def train(self):
        from .classifier import TrainConfig

        return TrainConfig(self.classifier_kind, self.classifier_epochs, self.classifier_learning_rate,
                           self.classifier_batch_size, self.run_seed)


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for name, value in parser.items(section):
                values[(section, name)] = value
    values.update(overrides or {})
    return ExperimentConfig(values)


def describe_keys():
    lines = ["configuration keys ([section] key = default  -- meaning; provenance):"]
    section = None
    for k in KEYS:
        if k.section != section:
            section = k.section
            lines.append(f"  [{section}]")
        default = ",".join(repr(v) for v in k.default) if isinstance(k.default, tuple) else k.default
        lines.append(f"    {k.name} = {default}  -- {k.doc}; {k.provenance}")
    return "\n".join(lines)
