import csv
import os

import numpy as np
import pytest

from freqcert import harness
from freqcert.cli import EXIT_ORACLE, EXIT_USAGE, main
from freqcert.config import KEYS, ExperimentConfig, describe_keys, load_config
from freqcert.errors import ConfigError

FAST = """\
[dataset]
n_train = 16
n_test = 8
n_points = 64

[classifier]
epochs = 3

[attack]
grid = 0, 0.5, 2.0
steps = 6

[certify]
grid = 0, 0.02, 0.04

[rs]
n_samples = 20

[oracle]
variation_trials = 500
stability_trials = 80
suite_seeds = 1
"""


def test_published_defaults():
    cfg = ExperimentConfig()
    assert (cfg.pipeline_k, cfg.pipeline_K, cfg.pipeline_m, cfg.pipeline_n, cfg.rs_sigma) == (20, 128, 32, 128, 0.5)
    assert cfg.certify_grid == (0.0, 0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14)
    assert cfg.attack_grid[-1] == 2.0 and len(cfg.attack_grid) == 9
    assert all(k.provenance in ("published method", "artifact default") for k in KEYS)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="valid keys"):
        ExperimentConfig({("pipeline", "q"): "1"})
    with pytest.raises(ConfigError, match="not found: .*missing.ini"):
        load_config(str(tmp_path / "missing.ini"))
    with pytest.raises(ConfigError, match="boolean"):
        ExperimentConfig({("oracle", "in_eval"): "maybe"})


def test_ini_round_trip(tmp_path):
    cfg = load_config(None, {("pipeline", "k"): "7", ("attack", "step_size"): "0.1"})
    path = tmp_path / "c.ini"
    path.write_text(cfg.to_ini())
    again = load_config(str(path))
    assert again.to_ini() == cfg.to_ini()
    assert again.pipeline_k == 7 and again.attack_step_size == 0.1
    assert again.pipeline().k == 7 and again.train().seed == 0


def test_describe_keys_lists_everything():
    text = describe_keys()
    for k in KEYS:
        assert f"    {k.name} = " in text
    assert "; published method" in text and "; artifact default" in text


@pytest.fixture(scope="module")
def fast_ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.ini"
    path.write_text(FAST)
    return str(path)


@pytest.fixture(scope="module")
def eval_runs(fast_ini, tmp_path_factory):
    outs, codes = [], []
    for _ in range(2):
        out = str(tmp_path_factory.mktemp("run"))
        codes.append(main(["eval", "--config", fast_ini, "--out", out, "--seed", "3"]))
        outs.append(out)
    return outs, codes


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_eval_outputs(eval_runs):
    (out, _), codes = eval_runs
    assert codes[0] in (0, EXIT_ORACLE)
    for name in ("report.csv", "report.dat", "certificates.csv", "attack_records.csv", "oracle_summary.csv",
                 "oracle_violations.csv", "config_snapshot.ini", "timing.txt"):
        assert os.path.exists(os.path.join(out, name)), name
    rows = _read(os.path.join(out, "report.csv"))
    assert [float(r["epsilon"]) for r in rows] == [0.0, 0.02, 0.04, 0.5, 2.0]
    cert = [float(r["certified_accuracy"]) for r in rows]
    assert all(a >= b for a, b in zip(cert, cert[1:]))
    for r in rows:
        vals = [float(v) for v in r.values()]
        assert all(0.0 <= v <= 2.0 for v in vals)
        assert float(r["certified_accuracy"]) <= float(r["empirical_accuracy_freqcert"])
    summary = _read(os.path.join(out, "oracle_summary.csv"))
    assert [s["check"] for s in summary][:5] == ["variation_bound", "gap_bound", "slice_stability",
                                                 "flip_budget_consistent", "flip_budget_published"]
    assert summary[0]["status"] == "pass"
    failed = any(s["status"] == "fail" for s in summary)
    assert codes[0] == (EXIT_ORACLE if failed else 0)


def test_eval_zero_epsilon_is_clean_accuracy(eval_runs):
    (out, _), _ = eval_runs
    rows = _read(os.path.join(out, "report.csv"))
    certs = _read(os.path.join(out, "certificates.csv"))
    clean = np.mean([c["prediction"] == c["label"] for c in certs])
    assert float(rows[0]["empirical_accuracy_freqcert"]) == clean
    # every reported number is recomputable from the per-sample tables
    recs = _read(os.path.join(out, "attack_records.csv"))
    for row in rows:
        hits = [int(r["correct"]) for r in recs if r["target"] == "undefended" and r["epsilon"] == row["epsilon"]]
        assert float(row["empirical_accuracy_undefended"]) == np.mean(hits)
        eps = float(row["epsilon"])
        certified = np.mean([c["prediction"] == c["label"] and float(c["R_star_consistent"]) > eps for c in certs])
        assert float(row["certified_accuracy"]) == certified


def test_eval_byte_identical(eval_runs):
    (a, b), _ = eval_runs
    for name in ("report.csv", "report.dat", "certificates.csv", "attack_records.csv", "oracle_summary.csv",
                 "oracle_violations.csv", "model_freqcert.txt", "model_undefended.txt"):
        with open(os.path.join(a, name), "rb") as fa, open(os.path.join(b, name), "rb") as fb:
            assert fa.read() == fb.read(), name
    # the snapshots differ only in the output directory
    snap = [open(os.path.join(d, "config_snapshot.ini")).read().replace(d, "<out>") for d in (a, b)]
    assert snap[0] == snap[1]


def test_cli_replay(eval_runs, capsys):
    (out, _), _ = eval_runs
    path = os.path.join(out, "oracle_violations.csv")
    n = len(_read(path))
    if n == 0:
        pytest.skip("no violations recorded")
    assert main(["replay", path, "--row", "0", "--row", str(n - 1)]) == 0
    assert "diff=0.000e+00" in capsys.readouterr().out
    assert main(["replay", path, "--row", str(n)]) == EXIT_USAGE


def test_cli_usage_errors(tmp_path, fast_ini, capsys):
    out = str(tmp_path)
    assert main(["certify", "--config", str(tmp_path / "nope.ini")]) == EXIT_USAGE
    assert "nope.ini" in capsys.readouterr().err
    assert main(["certify", "--set", "pipeline.zz=3", "--out", out]) == EXIT_USAGE
    assert "valid keys" in capsys.readouterr().err
    assert main(["certify", "--seed", "1", "--set", "run.seed=2", "--out", out]) == EXIT_USAGE
    assert main(["certify", "--config", fast_ini, "--out", out]) == EXIT_USAGE  # no trained model
    assert "train" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--oracle", "--no-oracle"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


def test_cli_help_lists_keys(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "radius_fraction" in text and "published method" in text


def test_gen_data_train_certify_attack(tmp_path, fast_ini, capsys):
    data = str(tmp_path / "data")
    assert main(["gen-data", "--config", fast_ini, "--out", data]) == 0
    assert sorted(os.listdir(data)) == ["manifest_test.csv", "manifest_train.csv", "test", "train"]
    run = str(tmp_path / "run")
    sets = ["--set", "dataset.source=manifest",
            "--set", f"dataset.train_manifest={data}/manifest_train.csv",
            "--set", f"dataset.test_manifest={data}/manifest_test.csv",
            "--set", "attack.dump_adversarial=true", "--config", fast_ini, "--out", run]
    assert main(["train"] + sets) == 0
    assert main(["certify"] + sets) == 0
    assert main(["attack"] + sets) == 0
    cols = _read(os.path.join(run, "report.csv"))[0].keys()
    assert "certified_accuracy" not in cols  # the attack-only report
    assert os.path.exists(os.path.join(run, "certificates.csv"))
    adv = _read(os.path.join(run, "adversarial", "manifest.csv"))
    assert {r["target"] for r in adv} == {"undefended", "freqcert"}
    assert os.path.exists(os.path.join(run, "adversarial", adv[0]["path"]))


def test_oracle_command_exit_code(tmp_path, fast_ini):
    code = main(["oracle", "--config", fast_ini, "--out", str(tmp_path)])
    rows = _read(os.path.join(tmp_path, "oracle_summary.csv"))
    failed = any(r["status"] == "fail" for r in rows)
    assert code == (EXIT_ORACLE if failed else 0)


def test_run_certify_errors():
    cfg = ExperimentConfig()
    with pytest.raises(ValueError, match="trained"):
        harness.run_certify(cfg, None, None)


def test_workers_do_not_change_results(tmp_path, fast_ini):
    cfg = load_config(fast_ini, {("dataset", "n_test"): "4"})
    train_ds, test_ds = harness.load_datasets(cfg)
    models = harness.train_models(cfg, train_ds)
    serial = harness.run_certify(cfg, models, test_ds)
    cfg.set("run", "workers", "2")
    parallel = harness.run_certify(cfg, models, test_ds)
    assert serial.rows == parallel.rows
    assert [c.id for c in parallel.certificates] == [s.id for s in test_ds.samples]
