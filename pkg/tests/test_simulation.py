import numpy as np
import pytest

from multipipe import (
    InvalidInputError,
    NumericalError,
    ScenarioSpec,
    SimConfig,
    build_scenario,
    estimate_two_sample,
    large_sample_weights,
    run_study,
    simulate_dataset,
)
from multipipe.simulation import ESTIMATOR_ORDER


class TestScenarios:
    def test_catalog(self):
        assert build_scenario("s1").j == 20
        assert build_scenario("S2").j == 6  # case-insensitive
        assert build_scenario("s3").j == 20
        with pytest.raises(InvalidInputError, match="unknown scenario"):
            build_scenario("s9")

    def test_s2_is_diagonal(self):
        spec = build_scenario("s2")
        off = spec.noise_cov - np.diag(np.diag(spec.noise_cov))
        assert np.abs(off).max() == 0.0
        # noise variances ordered like the inverse of the weight targets
        assert np.argmin(np.diag(spec.noise_cov)) == 1

    def test_noise_is_positive_semidefinite(self):
        for sid in ("s1", "s2", "s3"):
            vals = np.linalg.eigvalsh(build_scenario(sid).noise_cov)
            assert vals.min() >= -1e-10

    def test_scenario_spec_validation(self):
        with pytest.raises(InvalidInputError, match="shape"):
            ScenarioSpec(name="bad", j=3, noise_cov=np.eye(2))
        with pytest.raises(InvalidInputError, match="symmetric"):
            ScenarioSpec(name="bad", j=2, noise_cov=np.array([[1.0, 0.5], [0.1, 1.0]]))
        with pytest.raises(NumericalError, match="positive semi-definite"):
            ScenarioSpec(name="bad", j=2, noise_cov=np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(InvalidInputError, match="group_balance"):
            ScenarioSpec(name="bad", j=2, noise_cov=np.eye(2), group_balance=1.5)


class TestLargeSampleWeights:
    def test_s2_weights_are_exact(self):
        table = large_sample_weights(build_scenario("s2"))
        target = np.array([0.08, 0.82, 0.04, 0.03, 0.02, 0.01])
        np.testing.assert_allclose(table["average"], 1 / 6, atol=1e-15)
        np.testing.assert_allclose(table["pool_se"], target, atol=1e-9)
        np.testing.assert_allclose(table["gls"], target, atol=1e-9)
        np.testing.assert_allclose(table["constrained_gls"], target, atol=1e-9)

    def test_s1_gls_block_vs_independent(self):
        table = large_sample_weights(build_scenario("s1"))
        gls = table["gls"]
        np.testing.assert_allclose(gls[:15], 0.02, atol=5e-3)
        np.testing.assert_allclose(gls[15:], 0.14, atol=5e-3)

    def test_s3_gls_close_to_targets(self):
        table = large_sample_weights(build_scenario("s3"))
        gls = table["gls"]
        np.testing.assert_allclose(gls[:15], 0.006, atol=5e-3)
        np.testing.assert_allclose(
            gls[15:], [0.81, 0.04, 0.03, 0.02, 0.01], atol=5e-3
        )

    def test_s3_pool_se_close_to_targets(self):
        table = large_sample_weights(build_scenario("s3"))
        w = table["pool_se"]
        np.testing.assert_allclose(w[:15], 0.038, atol=5e-4)
        np.testing.assert_allclose(w[15:], [0.38, 0.02, 0.013, 0.01, 0.006], atol=5e-4)

    def test_every_column_sums_to_one(self):
        for sid in ("s1", "s2", "s3"):
            table = large_sample_weights(build_scenario(sid))
            for name in ESTIMATOR_ORDER:
                assert table[name].sum() == pytest.approx(1.0, abs=1e-9)

    def test_zero_noise_falls_back_to_equal_weights(self):
        spec = ScenarioSpec(name="clean", j=3, noise_cov=np.zeros((3, 3)))
        table = large_sample_weights(spec)
        for name in ESTIMATOR_ORDER:
            np.testing.assert_allclose(table[name], 1 / 3, atol=1e-12)


class TestSimulateDataset:
    def test_shapes_and_balance(self, rng):
        spec = build_scenario("s2")
        data = simulate_dataset(spec, n_per_group=8, rng=rng)
        assert data.values.shape == (16, 6)
        assert data.exposure.sum() == 8
        assert data.subjects[0] == "s0001"
        assert data.pipelines == ("p01", "p02", "p03", "p04", "p05", "p06")

    def test_deterministic_given_generator_state(self):
        spec = build_scenario("s1")
        a = simulate_dataset(spec, 5, np.random.default_rng(42))
        b = simulate_dataset(spec, 5, np.random.default_rng(42))
        np.testing.assert_array_equal(a.values, b.values)

    def test_effect_size_recovered(self):
        import dataclasses

        spec = dataclasses.replace(build_scenario("s2"), beta=1.2)
        data = simulate_dataset(spec, 4000, np.random.default_rng(1))
        joint, _ = estimate_two_sample(data)
        # psi is the same latent shift in every pipeline
        np.testing.assert_allclose(joint.psi_hat, 1.2, atol=0.12)

    def test_minimum_group_size(self, rng):
        with pytest.raises(InvalidInputError, match=">= 2"):
            simulate_dataset(build_scenario("s2"), 1, rng)

    def test_singular_noise_still_simulates(self, rng):
        # a rank-deficient noise covariance must not break the factorization
        cov = np.ones((3, 3))
        spec = ScenarioSpec(name="rank1", j=3, noise_cov=cov)
        data = simulate_dataset(spec, 10, rng)
        spread = data.values - data.values[:, [0]]
        np.testing.assert_allclose(spread, 0.0, atol=1e-12)


class TestSimConfig:
    def test_accepts_scenario_ids(self):
        cfg = SimConfig(scenarios=("s2",), n_grid=(5,), betas=(0.0,), replicates=2)
        assert cfg.scenarios[0].name == "s2"

    def test_validation(self):
        with pytest.raises(InvalidInputError, match="at least one scenario"):
            SimConfig(scenarios=(), n_grid=(5,), betas=(0.0,))
        with pytest.raises(InvalidInputError, match=">= 2"):
            SimConfig(scenarios=("s2",), n_grid=(1,), betas=(0.0,))
        with pytest.raises(InvalidInputError, match="effect size"):
            SimConfig(scenarios=("s2",), n_grid=(5,), betas=())
        with pytest.raises(InvalidInputError, match="replicates"):
            SimConfig(scenarios=("s2",), n_grid=(5,), betas=(0.0,), replicates=0)
        with pytest.raises(InvalidInputError, match="alpha"):
            SimConfig(scenarios=("s2",), n_grid=(5,), betas=(0.0,), alpha=2.0)
        with pytest.raises(InvalidInputError, match="ScenarioSpec"):
            SimConfig(scenarios=(42,), n_grid=(5,), betas=(0.0,))


@pytest.fixture(scope="module")
def tiny_study():
    cfg = SimConfig(
        scenarios=("s2",), n_grid=(6,), betas=(0.0, 0.8), replicates=12, seed=5
    )
    return cfg, run_study(cfg, workers=1)


class TestRunStudy:
    def test_row_grid(self, tiny_study):
        _, res = tiny_study
        keys = [(r.scenario, r.n, r.beta, r.estimator) for r in res.rows]
        expected = [
            ("s2", 6, b, est) for b in (0.0, 0.8) for est in ESTIMATOR_ORDER
        ]
        assert keys == expected
        assert res.flagged == ()
        assert all(count == 0 for count in res.failures.values())

    def test_aggregates_are_sane(self, tiny_study):
        _, res = tiny_study
        for r in res.rows:
            assert np.isfinite(r.bias)
            assert r.sd is None or r.sd > 0.0
            assert 0.0 <= r.rejection_rate <= 1.0
            assert 0.0 <= r.eta_mean <= 1.0
            binom = np.sqrt(r.rejection_rate * (1 - r.rejection_rate) / 12)
            assert r.mc_se == pytest.approx(binom, abs=1e-12)

    def test_effect_cells_reject_more(self, tiny_study):
        _, res = tiny_study
        by = {(r.beta, r.estimator): r for r in res.rows}
        for est in ESTIMATOR_ORDER:
            assert by[(0.8, est)].rejection_rate >= by[(0.0, est)].rejection_rate

    def test_csv_contract(self, tiny_study):
        _, res = tiny_study
        text = res.to_csv_string()
        lines = text.split("\n")
        assert lines[0] == "scenario,n,beta,estimator,bias,sd,rejection_rate,mc_se,eta_mean"
        assert len(lines) == 1 + 8 + 1  # header + rows + trailing newline
        assert lines[-1] == ""
        first = lines[1].split(",")
        assert first[0] == "s2" and first[1] == "6" and first[3] == "average"
        float(first[4])  # bias parses

    def test_single_replicate_blanks_sd(self):
        cfg = SimConfig(scenarios=("s2",), n_grid=(5,), betas=(0.0,), replicates=1, seed=3)
        res = run_study(cfg)
        assert all(r.sd is None for r in res.rows)
        line = res.to_csv_string().split("\n")[1].split(",")
        assert line[5] == ""

    def test_worker_invariance(self):
        cfg = SimConfig(scenarios=("s2",), n_grid=(5,), betas=(0.3,), replicates=8, seed=11)
        serial = run_study(cfg, workers=1).to_csv_string()
        parallel = run_study(cfg, workers=2).to_csv_string()
        assert serial == parallel

    def test_weight_tables_included(self, tiny_study):
        _, res = tiny_study
        assert set(res.weight_tables) == {"s2"}
        np.testing.assert_allclose(
            res.weight_tables["s2"]["gls"],
            [0.08, 0.82, 0.04, 0.03, 0.02, 0.01],
            atol=1e-9,
        )
