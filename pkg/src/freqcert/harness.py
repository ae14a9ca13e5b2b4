"""End-to-end evaluation: train, certify, attack, oracle, and the CSV reports."""
import csv
import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import oracle
from . import pipeline as pl
from .attack import AttackConfig, pgd_attack, rs_baseline_predict
from .certifier import CERTIFICATE_COLUMNS, certificate_row, certify_sample, majority_vote
from .classifier import TrainConfig, load_model, predict_many, save_model, train
from .cloud_io import format_xyz, load_manifest, synthetic_dataset

log = logging.getLogger(__name__)

BANNER = ("desk-scale run: synthetic data and a small feature classifier; "
          "accuracies are not comparable to published DGCNN/ModelNet40 curves")
REPORT_COLUMNS = ("epsilon", "certified_accuracy", "empirical_accuracy_freqcert",
                  "empirical_accuracy_undefended", "rs_certified_accuracy", "rs_empirical_accuracy")
RECORD_COLUMNS = ("id", "label", "epsilon", "target", "prediction", "correct", "radius", "final_loss",
                  "perturbation_norm")
ORACLE_COLUMNS = ("check", "status", "assertive", "instances", "trials", "violations", "topology_changes", "detail")


@dataclass
class Models:
    freqcert: object
    undefended: object


@dataclass
class RobustnessReport:
    rows: list = field(default_factory=list)
    certificates: list = field(default_factory=list)
    records: list = field(default_factory=list)
    config_snapshot: str = ""
    wall_clock: float = 0.0
    oracle: list = field(default_factory=list)


# ------------------------------------------------------------------ data


def load_datasets(cfg):
    if cfg.dataset_source == "synthetic":
        kw = dict(n_points=cfg.dataset_n_points, noise_std=cfg.dataset_noise_std, seed=cfg.run_seed)
        return (synthetic_dataset("train", cfg.dataset_n_train, **kw),
                synthetic_dataset("test", cfg.dataset_n_test, **kw))
    if cfg.dataset_source == "manifest":
        train_ds = load_manifest(cfg.dataset_train_manifest, split="train")
        test_ds = load_manifest(cfg.dataset_test_manifest, split="test", class_names=train_ds.class_names)
        return train_ds, test_ds
    raise ValueError(f"dataset.source must be 'synthetic' or 'manifest', got {cfg.dataset_source!r}")


def write_dataset(dataset, directory):
    """XYZ files plus a ``manifest_<split>.csv`` of ``path,label`` lines."""
    os.makedirs(os.path.join(directory, dataset.split), exist_ok=True)
    lines = []
    for s in dataset.samples:
        rel = os.path.join(dataset.split, f"{s.id}.xyz")
        with open(os.path.join(directory, rel), "w", encoding="utf-8") as fh:
            fh.write(format_xyz(s))
        lines.append(f"{rel},{s.label}\n")
    path = os.path.join(directory, f"manifest_{dataset.split}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    return path


# ---------------------------------------------------------------- models


def train_models(cfg, train_ds):
    tc = cfg.train()
    freqcert = train(train_ds, cfg.pipeline(), tc)
    undefended = train(train_ds, None, TrainConfig("tiny_mlp", tc.epochs, tc.learning_rate, tc.batch_size, tc.seed))
    return Models(freqcert, undefended)


def model_paths(out):
    return os.path.join(out, "model_freqcert.txt"), os.path.join(out, "model_undefended.txt")


def save_models(models, out):
    os.makedirs(out, exist_ok=True)
    fp, up = model_paths(out)
    save_model(models.freqcert, fp)
    save_model(models.undefended, up)


def load_models(out):
    fp, up = model_paths(out)
    if not (os.path.exists(fp) and os.path.exists(up)):
        raise FileNotFoundError(f"no trained models in {out}; run 'train' first")
    return Models(load_model(fp), load_model(up))


def _map(fn, items, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --------------------------------------------------------------- certify


def _certify_one(sample, model, pipe_cfg, cert_cfg, seed):
    sliced = pl.run(sample, pipe_cfg, pl.sample_seed(seed, sample.id))
    preds = predict_many(model, sliced.sub_clouds)
    spec = sliced.spectrum
    return certify_sample(sample, spec.decomp, spec.layout, sliced.slices, preds, cert_cfg,
                          C=model.C, profile=spec.profile, extra_flags=spec.params.flags)


def certified_accuracy(certificates, eps, which=None, threat=None):
    if not certificates:
        return 0.0
    return float(np.mean([c.correct and c.certified_at(eps, which, threat) for c in certificates]))


def run_certify(cfg, models, test_ds):
    if models is None:
        raise ValueError("run_certify needs trained models")
    if len(test_ds) == 0:
        raise ValueError("empty test set")
    fn = partial(_certify_one, model=models.freqcert, pipe_cfg=cfg.pipeline(), cert_cfg=cfg.certify(),
                 seed=cfg.run_seed)
    certs = _map(fn, test_ds.samples, cfg.run_workers)
    rows = [{"epsilon": e, "certified_accuracy": certified_accuracy(certs, e)} for e in cfg.certify_grid]
    return RobustnessReport(rows=rows, certificates=certs, config_snapshot=cfg.to_ini())


# ---------------------------------------------------------------- attack


def _attack_one(sample, models, pipe_cfg, eps_grid, steps, step_size, seed, rs_sigma, rs_n, dump_dir=None):
    records = []
    slice_seed = pl.sample_seed(seed, sample.id)
    clean_state = pl.run(sample, pipe_cfg, slice_seed)
    _, rs_radius = rs_baseline_predict(sample, models.undefended, rs_sigma, rs_n, seed)
    for eps in eps_grid:
        base = dict(id=sample.id, label=sample.label, epsilon=eps)
        und_adv, und_loss = pgd_attack(sample, models.undefended, None,
                                       AttackConfig(eps, steps, step_size, "undefended", seed), return_losses=True)
        und_pred = int(predict_many(models.undefended, [und_adv])[0])
        records.append(dict(base, target="undefended", prediction=und_pred, correct=int(und_pred == sample.label),
                            radius="", final_loss=und_loss[-1] if und_loss else "",
                            perturbation_norm=float(np.linalg.norm(und_adv.points - sample.points))))

        fc_adv, fc_loss = pgd_attack(sample, models.freqcert, clean_state,
                                     AttackConfig(eps, steps, step_size, "freqcert", seed), return_losses=True)
        fc_state = pl.run(fc_adv, pipe_cfg, slice_seed)
        fc_pred, _ = majority_vote(predict_many(models.freqcert, fc_state.sub_clouds), models.freqcert.C)
        records.append(dict(base, target="freqcert", prediction=fc_pred, correct=int(fc_pred == sample.label),
                            radius="", final_loss=fc_loss[-1] if fc_loss else "",
                            perturbation_norm=float(np.linalg.norm(fc_adv.points - sample.points))))

        rs_pred, _ = rs_baseline_predict(und_adv, models.undefended, rs_sigma, rs_n, seed)
        records.append(dict(base, target="rs", prediction=rs_pred, correct=int(rs_pred == sample.label),
                            radius=rs_radius, final_loss="",
                            perturbation_norm=float(np.linalg.norm(und_adv.points - sample.points))))
        if dump_dir is not None:
            name = safe_name(sample.id)
            for target, adv, losses in (("undefended", und_adv, und_loss), ("freqcert", fc_adv, fc_loss)):
                d = os.path.join(dump_dir, f"{target}_eps{eps:g}")
                os.makedirs(d, exist_ok=True)
                with open(os.path.join(d, f"{name}.xyz"), "w", encoding="utf-8") as fh:
                    fh.write(format_xyz(adv))
                with open(os.path.join(d, f"{name}.meta"), "w", encoding="utf-8") as fh:
                    fh.write(f"epsilon={eps!r}\nsteps={steps}\nseed={seed}\n"
                             f"loss={losses[-1] if losses else ''!r}\n")
    return records


def safe_name(sample_id):
    """File-name form of a sample id (manifest ids may contain path separators)."""
    return re.sub(r"[^\w.-]", "_", sample_id)


def attack_grid(cfg):
    return tuple(sorted(set(cfg.attack_grid) | set(cfg.certify_grid)))


def run_attack_eval(cfg, models, test_ds, out=None):
    """Attack records for every test sample at every epsilon of the merged grid."""
    dump = os.path.join(out, "adversarial") if (out and cfg.attack_dump_adversarial) else None
    fn = partial(_attack_one, models=models, pipe_cfg=cfg.pipeline(), eps_grid=attack_grid(cfg),
                 steps=cfg.attack_steps, step_size=cfg.attack_step_size, seed=cfg.run_seed,
                 rs_sigma=cfg.rs_sigma, rs_n=cfg.rs_n_samples, dump_dir=dump)
    records = [r for per in _map(fn, test_ds.samples, cfg.run_workers) for r in per]
    if dump:
        write_csv(os.path.join(dump, "manifest.csv"), ("path", "label", "epsilon", "target"),
                  [dict(path=f"{r['target']}_eps{r['epsilon']:g}/{safe_name(r['id'])}.xyz", label=r["label"],
                        epsilon=r["epsilon"], target=r["target"]) for r in records if r["target"] != "rs"])
    return records


def empirical_accuracy(records, eps, target):
    hits = [r["correct"] for r in records if r["target"] == target and r["epsilon"] == eps]
    return float(np.mean(hits)) if hits else float("nan")


def rs_certified_accuracy(records, eps):
    clean = [r for r in records if r["target"] == "rs" and r["epsilon"] == 0.0]
    if not clean:
        clean = [r for r in records if r["target"] == "rs"]
        clean = list({r["id"]: r for r in clean}.values())
    return float(np.mean([r["correct"] and float(r["radius"]) > eps for r in clean])) if clean else float("nan")


def attack_rows(cfg, records):
    return [{
        "epsilon": eps,
        "empirical_accuracy_freqcert": empirical_accuracy(records, eps, "freqcert"),
        "empirical_accuracy_undefended": empirical_accuracy(records, eps, "undefended"),
        "rs_certified_accuracy": rs_certified_accuracy(records, eps),
        "rs_empirical_accuracy": empirical_accuracy(records, eps, "rs"),
    } for eps in attack_grid(cfg)]


def merge_rows(cfg, certificates, records):
    rows = attack_rows(cfg, records)
    for row in rows:
        row["certified_accuracy"] = certified_accuracy(certificates, row["epsilon"])
    return rows


# ---------------------------------------------------------------- oracle


def run_oracle_suite(cfg):
    suite = oracle.small_suite(n_seeds=cfg.oracle_suite_seeds)
    seed = cfg.run_seed
    trials = cfg.oracle_stability_trials
    reports = [
        oracle.check_variation_bound(cfg.oracle_variation_trials, seed),
        oracle.check_gap_bound(suite),
        oracle.run_suite_check("slice_stability", suite, trials, seed, radius_fraction=cfg.oracle_radius_fraction),
        oracle.run_suite_check("flip_budget", suite, trials, seed, variant="consistent"),
        oracle.run_suite_check("flip_budget", suite, trials, seed, variant="published"),
    ]
    ew_suite = [(d.replace("mode=basis", "mode=energy_weighted"), c,
                 pl.PipelineConfig(cfg_.k, cfg_.K, cfg_.m, cfg_.n, cfg_.sigma_factor, "energy_weighted"))
                for d, c, cfg_ in suite]
    ew = oracle.run_suite_check("slice_stability", ew_suite, trials, seed, radius_fraction=cfg.oracle_radius_fraction)
    ew.check_name, ew.assertive = "slice_stability_energy_weighted", False
    reports.append(ew)
    for excess in (-0.5, 10.0):
        probes = [oracle.tightness_probe(c, cfg_, excess, seed) for _, c, cfg_ in suite]
        merged = oracle.merge(probes, f"tightness_probe_excess_{excess:g}", assertive=False)
        merged.details["flip_rate"] = float(np.mean([p.details["flipped"] for p in probes]))
        reports.append(merged)
    return reports


def oracle_detail(report):
    d = report.details
    if report.check_name == "variation_bound":
        return f"min_slack={d['min_slack']:.3e}"
    if report.check_name == "gap_bound":
        return f"violation_rate={d['violation_rate']:.4f}"
    if report.check_name.startswith("tightness"):
        return f"flip_rate={d['flip_rate']:.3f}"
    parts = [f"topology_change_rate={d.get('topology_change_rate', 0.0):.4f}"]
    per = d.get("per_instance", [])
    if per and "max_flips" in per[0]:
        parts.append("max_flips_vs_p=" + "|".join(f"{x['max_flips']}/{x['p']}" for x in per))
    return " ".join(parts)


def oracle_rows(reports):
    rows = []
    for r in reports:
        status = ("pass" if r.passed else "fail") if r.assertive else "report"
        rows.append(dict(check=r.check_name, status=status, assertive=int(r.assertive),
                         instances=r.instances_tested, trials=r.trials, violations=len(r.violations),
                         topology_changes=r.topology_changes, detail=oracle_detail(r)))
    return rows


def oracle_failed(reports):
    return any(r.assertive and not r.passed for r in reports)


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def write_dat(path, columns, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + " ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(repr(float(row[c])) for c in columns) + "\n")


def write_report(out, report):
    os.makedirs(out, exist_ok=True)
    if report.rows:
        columns = [c for c in REPORT_COLUMNS if c in report.rows[0]]
        write_csv(os.path.join(out, "report.csv"), columns, report.rows)
        write_dat(os.path.join(out, "report.dat"), columns, report.rows)
    if report.certificates:
        write_csv(os.path.join(out, "certificates.csv"), CERTIFICATE_COLUMNS,
                  [certificate_row(c) for c in report.certificates])
    if report.records:
        write_csv(os.path.join(out, "attack_records.csv"), RECORD_COLUMNS, report.records)
    if report.oracle:
        write_csv(os.path.join(out, "oracle_summary.csv"), ORACLE_COLUMNS, oracle_rows(report.oracle))
        oracle.write_violations(report.oracle, os.path.join(out, "oracle_violations.csv"))
    if report.config_snapshot:
        with open(os.path.join(out, "config_snapshot.ini"), "w", encoding="utf-8") as fh:
            fh.write(f"# {BANNER}\n" + report.config_snapshot)
    with open(os.path.join(out, "timing.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"wall_clock_seconds={report.wall_clock:.3f}\n")


def prepare_models(cfg, train_ds, out, retrain=False):
    if not retrain:
        try:
            return load_models(out)
        except FileNotFoundError:
            pass
    models = train_models(cfg, train_ds)
    save_models(models, out)
    return models


def run_eval(cfg, out=None, with_oracle=None, retrain=False):
    """Certify + attack (+ oracle) with a merged report written to ``out``."""
    t0 = time.perf_counter()
    out = out or cfg.run_out
    train_ds, test_ds = load_datasets(cfg)
    models = prepare_models(cfg, train_ds, out, retrain)
    cert = run_certify(cfg, models, test_ds)
    records = run_attack_eval(cfg, models, test_ds, out)
    report = RobustnessReport(rows=merge_rows(cfg, cert.certificates, records), certificates=cert.certificates,
                              records=records, config_snapshot=cfg.to_ini())
    if cfg.oracle_in_eval if with_oracle is None else with_oracle:
        report.oracle = run_oracle_suite(cfg)
    report.wall_clock = time.perf_counter() - t0
    write_report(out, report)
    return report
