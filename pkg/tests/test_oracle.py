import csv

import numpy as np
import pytest

from freqcert import oracle
from freqcert import pipeline as pl
from freqcert.certifier import certify_sample, flip_budgets
from freqcert.cloud_io import generate_shape

from conftest import SMALL


def test_variation_trivial_cases():
    u = np.array([1.0, 0.0, 0.0])
    p = np.array([0.3, 0.4, 0.0])
    assert oracle.variation_gap(u, p, np.zeros(3)) == 0.0
    # u orthogonal to p and dp: lhs 0, rhs >= 0
    gap = oracle.variation_gap(u, np.array([0, 0.5, 0]), np.array([0, 0, 0.2]))
    assert gap == pytest.approx(2 * 0.2 + 0.04)


def test_variation_bound_randomized():
    r = oracle.check_variation_bound(5000, seed=3)
    assert r.passed and r.assertive and r.trials == 5000
    assert r.details["min_slack"] >= 0


def test_descriptor_round_trip():
    suite = oracle.small_suite(n_seeds=1)
    assert len(suite) == 4
    desc, cloud, cfg = suite[0]
    again, cfg2 = oracle.parse_descriptor(desc)
    assert np.array_equal(again.points, cloud.points) and cfg2 == cfg == SMALL
    assert desc == "shape=sphere;n_points=32;noise=0.02;seed=1000;k=6;K=8;m=4;n=8;mode=basis"


def test_gap_bound_schema():
    r = oracle.check_gap_bound(oracle.small_suite(n_seeds=1))
    assert not r.assertive and r.instances_tested == 4 and r.trials == 128
    for row in r.details["per_cloud"]:
        assert set(row) == {"instance", "violation_rate", "min_slack"}


def test_gap_bound_duplicate_eigenvalue():
    # a regular cube's 8 corners: the graph is symmetric and the spectrum repeats
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    cloud = generate_shape("sphere", 8, 0.0, 0).with_points(corners / np.sqrt(3))
    cfg = pl.PipelineConfig(k=3, K=2, m=1, n=2)
    spec = pl.analyze(cloud, cfg)
    assert spec.decomp.eigengap < 1e-10
    r = oracle.check_gap_bound([("cube-corners", cloud, cfg)], interpretation="all_bands")
    assert r.violations == []


def test_stability_vanishing_radius():
    cloud = generate_shape("cube", 32, 0.02, 1000)
    r = oracle.check_slice_stability(cloud, SMALL, radius_fraction=1e-6, trials=100, seed=0)
    assert r.passed and r.topology_changes == 0


def test_stability_radius_fraction_range():
    with pytest.raises(ValueError):
        oracle.check_slice_stability(generate_shape("cube", 32, 0.02, 1), SMALL, radius_fraction=0.0)


def test_near_tie_counts_topology_changes_not_violations():
    cloud = generate_shape("cube", 32, 0.02, 1000)
    pts = cloud.points.copy()
    d = np.linalg.norm(pts - pts[0], axis=1)
    order = np.argsort(d)
    kth, nxt = order[SMALL.k], order[SMALL.k + 1]
    pts[nxt] = pts[0] + (pts[nxt] - pts[0]) / d[nxt] * (d[kth] + 1e-12)
    r = oracle.check_slice_stability(cloud.with_points(pts), SMALL, 0.5, 200, seed=0)
    assert r.topology_changes > 0
    assert r.passed


def test_flip_budget_p_matches_certifier():
    cloud = generate_shape("torus", 32, 0.02, 1001)
    spec, slices, p, radius = oracle.flip_budget_setup(cloud, SMALL, slice_seed=0)
    cert = certify_sample(cloud, spec.decomp, spec.layout, slices, [0] * SMALL.m, C=4, profile=spec.profile)
    assert p == cert.p == flip_budgets(SMALL.m, slices.kappa)[1]
    assert radius == cert.R_star_consistent
    r = oracle.check_flip_budget(cloud, SMALL, "published", trials=10)
    assert not r.assertive and r.check_name == "flip_budget_published"


def test_tightness_probe_schema_and_below_threshold():
    cloud = generate_shape("sphere", 32, 0.02, 1000)
    r = oracle.tightness_probe(cloud, SMALL, margin_excess=-0.5)
    assert not r.assertive
    assert r.details["ratio"] == pytest.approx(0.5, abs=1e-12)
    assert r.details["flipped"] is False


@pytest.fixture(scope="module")
def stability_run():
    suite = oracle.small_suite(n_seeds=1)
    return oracle.run_suite_check("slice_stability", suite, 400, seed=5)


def test_suite_merge(stability_run):
    r = stability_run
    assert r.check_name == "slice_stability" and r.assertive
    assert r.instances_tested == 4 and r.trials == 400
    assert len(r.details["per_instance"]) == 4
    assert 0 <= r.details["topology_change_rate"] <= 1


def test_violation_rows_replay(tmp_path, stability_run):
    reports = [stability_run, oracle.check_gap_bound(oracle.small_suite(n_seeds=1))]
    path = tmp_path / "v.csv"
    oracle.write_violations(reports, str(path))
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows, "the small suite produces at least one recorded row"
    checks = {row["check"] for row in rows}
    assert "gap_bound" in checks
    for row in rows[:3] + rows[-3:]:
        assert abs(oracle.replay(row) - float(row["observed"])) <= 1e-12
    # a verbatim CSV line is accepted too
    line = path.read_text().splitlines()[1]
    assert abs(oracle.replay(line) - float(rows[0]["observed"])) <= 1e-12


def test_replay_variation_row():
    lhs, _, _ = oracle._variation_trial(0, 17)
    row = {"check": "variation_bound", "instance": "-", "seed": "0", "trial": "17"}
    assert oracle.replay(row) == lhs
    with pytest.raises(ValueError, match="cannot replay"):
        oracle.replay({"check": "tightness", "instance": oracle.small_suite(1)[0][0], "seed": "0", "trial": "0"})
