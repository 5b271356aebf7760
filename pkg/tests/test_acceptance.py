"""Acceptance gate: one test per release criterion.

Each test is self-contained, seeded, and asserts its own runtime budget, so
``pytest -v tests/test_acceptance.py`` prints exactly one pass/fail line per
criterion.  Criteria 4 and 5 share a single 1000-replicate null study run
once per session (about 40 s on one core).
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import ndtr, ndtri

from multipipe import (
    JointEstimates,
    McSettings,
    critical_value,
    estimate_two_sample,
    gls_weights,
    maxtest_pvalue,
    pool_gls,
    rect_prob,
)
from multipipe.cli import main
from multipipe.inference import (
    proportion_parametric,
    proportion_se_bootstrap,
    proportion_se_delta,
)
from multipipe.pooling import constrain_weights
from multipipe.report import write_long_csv
from multipipe.simulation import (
    SimConfig,
    build_scenario,
    large_sample_weights,
    run_study,
    simulate_dataset,
)

from conftest import random_spd, two_group_dataset


def test_01_gls_spectral_weights_match_direct_inverse():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    for _ in range(200):
        j = int(rng.integers(2, 21))
        sigma = random_spd(j, rng)
        w, dropped = gls_weights(sigma)
        assert dropped == 0
        direct = np.linalg.solve(sigma, np.ones(j))
        direct /= direct.sum()
        np.testing.assert_allclose(w, direct, rtol=1e-10, atol=1e-13)
    assert time.perf_counter() - start < 5.0


def test_02_gls_pooling_equals_joint_model_estimator():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    for _ in range(50):
        beta = float(rng.uniform(0.0, 1.0))
        data = two_group_dataset(rng, n_per_group=100, j=5, beta=beta, noise=0.8)
        joint, _ = estimate_two_sample(data)
        pooled = pool_gls(joint)

        # independent oracle: GLS on the group-difference vector using the
        # pooled within-group second moment of the residuals
        exposed = data.exposure.astype(bool)
        mu1 = data.values[exposed].mean(axis=0)
        mu0 = data.values[~exposed].mean(axis=0)
        resid = data.values.copy()
        resid[exposed] -= mu1
        resid[~exposed] -= mu0
        sigma_eps = resid.T @ resid / data.values.shape[0]
        lhs = np.linalg.solve(sigma_eps, np.ones(5))
        oracle = float(lhs @ (mu1 - mu0) / lhs.sum())
        assert pooled.estimate == pytest.approx(oracle, abs=1e-8)
    assert time.perf_counter() - start < 10.0


def test_03_large_sample_weight_tables():
    tol = 5e-3  # half a percentage point

    s1 = large_sample_weights(build_scenario("s1"))
    np.testing.assert_allclose(s1["gls"][:15], 0.02, atol=tol)
    np.testing.assert_allclose(s1["gls"][15:], 0.14, atol=tol)

    s2 = large_sample_weights(build_scenario("s2"))
    target = np.array([0.08, 0.82, 0.04, 0.03, 0.02, 0.01])
    np.testing.assert_allclose(s2["pool_se"], target, atol=tol)
    np.testing.assert_allclose(s2["gls"], target, atol=tol)

    s3 = large_sample_weights(build_scenario("s3"))
    np.testing.assert_allclose(s3["gls"][:15], 0.006, atol=tol)
    np.testing.assert_allclose(
        s3["gls"][15:], [0.81, 0.04, 0.03, 0.02, 0.01], atol=tol
    )


@pytest.fixture(scope="module")
def null_study():
    config = SimConfig(
        scenarios=("s2",),
        n_grid=(10, 500),
        betas=(0.0,),
        replicates=1000,
        seed=20260401,
        alpha=0.05,
    )
    start = time.perf_counter()
    results = run_study(config, workers=1)
    return results, time.perf_counter() - start


def _cell(results, n, estimator):
    return next(r for r in results.rows if r.n == n and r.estimator == estimator)


def test_04_type_one_error_calibration(null_study):
    results, elapsed = null_study
    assert elapsed < 120.0
    assert 0.033 <= _cell(results, 500, "average").rejection_rate <= 0.067
    assert 0.033 <= _cell(results, 500, "pool_se").rejection_rate <= 0.067
    assert _cell(results, 10, "gls").rejection_rate > 0.10


def test_05_efficiency_ordering(null_study):
    results, elapsed = null_study
    assert elapsed < 120.0
    ratio = _cell(results, 500, "gls").sd / _cell(results, 500, "average").sd
    assert 0.70 <= ratio <= 0.82
    for n in (10, 500):
        best = min(_cell(results, n, "gls").sd, _cell(results, n, "average").sd)
        assert _cell(results, n, "constrained_gls").sd <= 1.04 * best


def test_06_rectangle_probabilities():
    start = time.perf_counter()
    lim = 1.959964

    five = rect_prob(np.eye(5), np.full(5, -lim), np.full(5, lim), McSettings(seed=0))
    assert five.p == pytest.approx(0.773781, abs=2e-3)

    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    two = rect_prob(corr, np.full(2, -lim), np.full(2, lim), McSettings(seed=0))
    assert two.p == pytest.approx(0.9092537889428988, abs=1e-3)  # 2-D quadrature

    se = np.full(2, 0.1)
    t = np.array([1.5, 3.0])
    joint = JointEstimates(
        psi_hat=t * se,
        se=se,
        sigma=np.eye(2) * 0.01,
        n=400,
        t_stats=t,
        pipelines=("p0", "p1"),
    )
    _, adjusted = maxtest_pvalue(joint, McSettings(seed=0))
    assert adjusted[0] == pytest.approx(0.2493, abs=2e-3)
    assert time.perf_counter() - start < 10.0


def test_07_critical_value_bounds():
    start = time.perf_counter()
    assert critical_value(np.eye(2), 0.05, McSettings(seed=0)) == pytest.approx(
        2.2365, abs=0.005
    )
    z = float(-ndtri(0.025))
    rng = np.random.default_rng(77)
    for k in range(50):
        j = int(rng.integers(2, 13))
        loadings = rng.uniform(0.3, 0.95, size=j)
        corr = np.outer(loadings, loadings)
        np.fill_diagonal(corr, 1.0)
        t_c = critical_value(corr, 0.05, McSettings(seed=k))
        bonferroni = float(-ndtri(0.025 / j))
        assert z <= t_c <= bonferroni
    assert time.perf_counter() - start < 30.0


def test_08_constrained_weights():
    raw, dropped = gls_weights(np.array([[1.0, 1.9], [1.9, 4.0]]))
    assert dropped == 0
    np.testing.assert_allclose(raw, [1.75, -0.75], atol=1e-12)
    constrained, kappa = constrain_weights(raw)
    assert kappa == pytest.approx(0.75, abs=1e-8)
    np.testing.assert_allclose(constrained, [1.0, 0.0], atol=1e-8)

    rng = np.random.default_rng(808)
    for _ in range(500):
        j = int(rng.integers(2, 15))
        raw, _ = gls_weights(random_spd(j, rng, jitter=0.01))
        constrained, kappa = constrain_weights(raw)
        assert np.all(np.abs(constrained) <= 1.0 + 1e-12)
        assert constrained.sum() == pytest.approx(1.0, abs=1e-9)
        assert 0.0 <= kappa <= 1.0


def test_09_proportion_estimator():
    start = time.perf_counter()
    exact_t = float(-ndtri(0.025))
    assert proportion_parametric(np.zeros(5), exact_t) == pytest.approx(
        0.05, abs=1e-12
    )
    assert proportion_parametric(np.zeros(5), 1.96) == pytest.approx(
        2.0 * ndtr(-1.96), abs=1e-15
    )
    assert proportion_parametric(np.zeros(5), 1.96) == pytest.approx(0.05, abs=1e-5)

    t_c = 1.959964
    spec = replace(build_scenario("s2"), beta=0.3)
    data = simulate_dataset(spec, 100, np.random.default_rng(3))  # n = 200
    joint, _ = estimate_two_sample(data)
    delta_se = proportion_se_delta(joint, t_c)

    # finite-difference oracle: same gradient, derived numerically
    h = 1e-6
    grad = np.empty(joint.j)
    for k in range(joint.j):
        up, down = joint.psi_hat.copy(), joint.psi_hat.copy()
        up[k] += h
        down[k] -= h
        grad[k] = (
            proportion_parametric(up / joint.se, t_c)
            - proportion_parametric(down / joint.se, t_c)
        ) / (2.0 * h)
    fd_se = float(np.sqrt(grad @ joint.sigma @ grad))
    assert delta_se == pytest.approx(fd_se, abs=1e-6)

    boot_se, _ = proportion_se_bootstrap(data, "two_sample", t_c, 200, 3)
    assert abs(delta_se - boot_se) <= 0.20 * boot_se
    assert time.perf_counter() - start < 60.0


def test_10_byte_identical_across_workers(tmp_path):
    rng = np.random.default_rng(10)
    data = two_group_dataset(rng, n_per_group=10, j=3, beta=0.5, noise=0.7)
    csv = tmp_path / "input.csv"
    write_long_csv(data, csv)

    artifacts = {}
    for label, workers in (("one", "1"), ("three", "3"), ("again", "1")):
        out = tmp_path / label
        code = main(
            [
                "analyze",
                "--input",
                str(csv),
                "--mode",
                "two-sample",
                "--seed",
                "6",
                "--bootstrap",
                "100",
                "--workers",
                workers,
                "--out-dir",
                str(out),
            ]
        )
        assert code == 0
        artifacts[label] = [
            (out / name).read_bytes()
            for name in ("report.csv", "report.jsonl", "heatmap.svg", "forest.svg")
        ]
    assert artifacts["one"] == artifacts["three"] == artifacts["again"]

    sims = {}
    for label, workers in (("one", "1"), ("three", "3"), ("again", "1")):
        out = tmp_path / f"sim_{label}.csv"
        code = main(
            [
                "simulate",
                "--scenario",
                "s2",
                "--n",
                "6",
                "--replicates",
                "8",
                "--seed",
                "4",
                "--workers",
                workers,
                "--out",
                str(out),
            ]
        )
        assert code == 0
        sims[label] = out.read_bytes()
    assert sims["one"] == sims["three"] == sims["again"]
