import importlib

import numpy as np
import pytest
from scipy.special import ndtr, ndtri

from multipipe import (
    ConvergenceError,
    InvalidInputError,
    JointEstimates,
    McSettings,
    adjusted_ci,
    critical_value,
    maxtest_pvalue,
    rect_prob,
)
from multipipe import mvn, _mvnkern_py

from conftest import random_correlation

# Quadrature oracles, frozen from scipy.integrate.quad runs (abs err < 1e-13):
# conditional decomposition for the bivariate box, single-factor reduction
# for the equicorrelated boxes.
ORACLE_BIVARIATE_HALF = 0.9092537889428988  # rho=0.5, box +-1.959964
ORACLE_EQUI4 = 0.8404225081073005  # J=4, rho=0.3, box +-2.0
# trivariate equicorrelated rho=0.5 negative orthant is exactly 1/4
ORACLE_ORTHANT3 = 0.25


def _equi(j, rho):
    return rho * np.ones((j, j)) + (1.0 - rho) * np.eye(j)


class TestMcSettings:
    def test_defaults_valid(self):
        McSettings().validate()

    @pytest.mark.parametrize(
        "kwargs, msg",
        [
            ({"target_abs_error": 0.0}, "positive"),
            ({"max_samples": 100}, "at least 1000"),
            ({"batch": 1}, "at least 2"),
        ],
    )
    def test_rejects_bad_budgets(self, kwargs, msg):
        with pytest.raises(InvalidInputError, match=msg):
            McSettings(**kwargs).validate()


class TestRectProb:
    def test_univariate_is_exact(self):
        res = rect_prob(np.eye(1), np.array([-1.0]), np.array([2.0]))
        assert res.p == ndtr(2.0) - ndtr(-1.0)
        assert res.error_estimate == 0.0
        assert res.samples_used == 0

    def test_identity_matches_product(self):
        b = 1.959964
        res = rect_prob(np.eye(5), np.full(5, -b), np.full(5, b))
        expected = (ndtr(b) - ndtr(-b)) ** 5
        # integrand is constant under independence, so QMC nails it
        assert res.p == pytest.approx(expected, abs=1e-7)
        assert res.error_estimate <= 1e-12

    def test_bivariate_against_quadrature(self):
        b = 1.959964
        res = rect_prob(_equi(2, 0.5), np.full(2, -b), np.full(2, b))
        assert res.p == pytest.approx(ORACLE_BIVARIATE_HALF, abs=1e-3)
        assert abs(res.p - ORACLE_BIVARIATE_HALF) < 5 * max(res.error_estimate, 1e-5)

    def test_equicorrelated_against_quadrature(self):
        res = rect_prob(_equi(4, 0.3), np.full(4, -2.0), np.full(4, 2.0))
        assert res.p == pytest.approx(ORACLE_EQUI4, abs=1e-3)

    def test_orthant_with_infinite_bounds(self):
        res = rect_prob(_equi(3, 0.5), np.full(3, -np.inf), np.zeros(3))
        assert res.p == pytest.approx(ORACLE_ORTHANT3, abs=1e-3)

    def test_perfectly_correlated_pair_collapses(self):
        # rank-1 correlation: both coordinates are the same variable
        corr = np.ones((2, 2))
        lo = np.array([-1.0, -2.0])
        hi = np.array([0.5, 1.5])
        res = rect_prob(corr, lo, hi)
        assert res.p == pytest.approx(ndtr(0.5) - ndtr(-1.0), abs=2e-3)

    def test_deterministic_given_seed(self):
        corr = _equi(4, 0.4)
        lo, hi = np.full(4, -1.5), np.full(4, 2.5)
        a = rect_prob(corr, lo, hi, McSettings(seed=11))
        b = rect_prob(corr, lo, hi, McSettings(seed=11))
        c = rect_prob(corr, lo, hi, McSettings(seed=12))
        assert (a.p, a.error_estimate, a.samples_used) == (b.p, b.error_estimate, b.samples_used)
        assert c.p != a.p  # different randomization, same target
        assert c.p == pytest.approx(a.p, abs=5e-3)

    def test_widening_bounds_increases_mass(self):
        corr = _equi(3, 0.6)
        settings = McSettings(seed=5)
        narrow = rect_prob(corr, np.full(3, -1.0), np.full(3, 1.0), settings)
        wide = rect_prob(corr, np.full(3, -2.0), np.full(3, 2.0), settings)
        assert 0.0 < narrow.p < wide.p < 1.0

    def test_tighter_target_uses_more_samples(self):
        corr = _equi(5, 0.35)
        lo, hi = np.full(5, -1.2), np.full(5, 1.8)
        loose = rect_prob(corr, lo, hi, McSettings(seed=3, target_abs_error=5e-3))
        tight = rect_prob(corr, lo, hi, McSettings(seed=3, target_abs_error=1e-4))
        assert tight.samples_used > loose.samples_used
        assert tight.error_estimate <= 1e-4 or tight.samples_used >= 2**19

    @pytest.mark.parametrize(
        "corr, msg",
        [
            (np.array([[1.0, 0.2, 0.1], [0.2, 1.0, 0.3]]), "square"),
            (np.array([[1.0, 0.9], [0.1, 1.0]]), "symmetric"),
            (np.array([[2.0, 0.0], [0.0, 1.0]]), "unit diagonal"),
            (np.array([[1.0, np.nan], [np.nan, 1.0]]), "non-finite"),
            (np.array([[1.0, -0.9], [-0.9, 1.0]]) * np.array([[1, 1], [1, -1]]), None),
        ],
    )
    def test_rejects_bad_correlation(self, corr, msg):
        with pytest.raises(InvalidInputError, match=msg):
            rect_prob(corr, np.full(2, -1.0), np.full(2, 1.0))

    def test_rejects_indefinite_matrix(self):
        corr = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        with pytest.raises(InvalidInputError, match="positive semi-definite"):
            rect_prob(corr, np.full(3, -1.0), np.full(3, 1.0))

    def test_rejects_bad_bounds(self):
        corr = np.eye(2)
        with pytest.raises(InvalidInputError, match="NaN"):
            rect_prob(corr, np.array([np.nan, -1.0]), np.ones(2))
        with pytest.raises(InvalidInputError, match="lower < upper"):
            rect_prob(corr, np.array([1.0, -1.0]), np.array([1.0, 1.0]))
        with pytest.raises(InvalidInputError):
            rect_prob(corr, np.zeros(3), np.ones(3))


class TestCriticalValue:
    def test_univariate_is_normal_quantile(self):
        tc = critical_value(np.eye(1), 0.05)
        assert tc == pytest.approx(-ndtri(0.025), abs=5e-4)

    def test_independent_matches_sidak(self):
        # closed form for independence: Phi^-1 applied to the Sidak level
        sidak = -ndtri((1.0 - (1.0 - 0.05) ** 0.5) / 2.0)
        tc = critical_value(np.eye(2), 0.05)
        assert tc == pytest.approx(sidak, abs=5e-3)

    def test_bracketed_by_z_and_bonferroni(self, rng):
        alpha = 0.05
        for _ in range(6):
            j = int(rng.integers(2, 9))
            corr = random_correlation(j, rng, strength=0.8)
            tc = critical_value(corr, alpha, McSettings(seed=99))
            assert -ndtri(alpha / 2.0) <= tc <= -ndtri(alpha / (2.0 * j)) + 1e-9

    def test_monotone_in_alpha(self):
        corr = _equi(4, 0.5)
        t10 = critical_value(corr, 0.10, McSettings(seed=2))
        t01 = critical_value(corr, 0.01, McSettings(seed=2))
        assert t01 > t10

    def test_strong_correlation_against_quadrature(self):
        # factor-reduction quadrature + root find gives 1.9862954234 for
        # J=3, rho=0.999 at the 5% level; far closer to the single-test
        # 1.96 than to the independent-case 2.39
        corr = _equi(3, 0.999)
        tc = critical_value(corr, 0.05, McSettings(seed=8))
        assert tc == pytest.approx(1.9862954234397088, abs=5e-3)

    def test_alpha_validation(self):
        with pytest.raises(InvalidInputError, match="alpha"):
            critical_value(np.eye(2), 1.5)

    def test_consistency_with_rect_prob(self):
        corr = _equi(5, 0.4)
        tc = critical_value(corr, 0.05, McSettings(seed=4))
        res = rect_prob(corr, np.full(5, -tc), np.full(5, tc), McSettings(seed=4))
        assert res.p == pytest.approx(0.95, abs=2e-3)


class TestMaxTest:
    @staticmethod
    def _joint(t_stats, corr, n=400):
        t = np.asarray(t_stats, dtype=float)
        se = np.full(t.size, 0.1)
        sigma = corr * np.outer(se, se)
        return JointEstimates(
            psi_hat=t * se,
            se=se,
            sigma=sigma,
            n=n,
            t_stats=t,
            pipelines=tuple(f"p{i}" for i in range(t.size)),
        )

    def test_independent_pair_closed_form(self):
        joint = self._joint([1.5, 3.0], np.eye(2))
        global_p, adjusted = maxtest_pvalue(joint)
        expected_15 = 1.0 - (2.0 * ndtr(1.5) - 1.0) ** 2
        expected_30 = 1.0 - (2.0 * ndtr(3.0) - 1.0) ** 2
        assert adjusted[0] == pytest.approx(expected_15, abs=2e-3)
        assert adjusted[1] == pytest.approx(expected_30, abs=2e-3)
        assert global_p == adjusted[1]

    def test_zero_statistic_gets_p_one(self):
        joint = self._joint([0.0, 2.0], np.eye(2))
        _, adjusted = maxtest_pvalue(joint)
        assert adjusted[0] == 1.0

    def test_adjusted_never_below_unadjusted(self):
        joint = self._joint([0.8, -1.7, 2.4], _equi(3, 0.5))
        _, adjusted = maxtest_pvalue(joint)
        unadjusted = 2.0 * ndtr(-np.abs(joint.t_stats))
        assert (adjusted >= unadjusted - 2e-3).all()

    def test_perfect_correlation_reduces_to_single_test(self):
        joint = self._joint([1.8, 1.8], np.ones((2, 2)))
        _, adjusted = maxtest_pvalue(joint)
        assert adjusted[0] == pytest.approx(2.0 * ndtr(-1.8), abs=2e-3)

    def test_global_is_minimum_of_adjusted(self, rng):
        joint = self._joint(rng.standard_normal(4) * 1.5, random_correlation(4, rng))
        global_p, adjusted = maxtest_pvalue(joint)
        assert global_p == adjusted.min()


class TestAdjustedCi:
    def test_interval_construction(self, rng):
        t = np.array([0.5, -2.0, 3.1])
        se = np.array([0.2, 0.3, 0.15])
        joint = JointEstimates(
            psi_hat=t * se,
            se=se,
            sigma=np.diag(se**2),
            n=100,
            t_stats=t,
            pipelines=("a", "b", "c"),
        )
        ci = adjusted_ci(joint, 2.5)
        assert ci.shape == (3, 2)
        np.testing.assert_allclose(ci[:, 0], joint.psi_hat - 2.5 * se, atol=1e-14)
        np.testing.assert_allclose(ci[:, 1], joint.psi_hat + 2.5 * se, atol=1e-14)
        with pytest.raises(InvalidInputError, match="nonnegative"):
            adjusted_ci(joint, -1.0)


class TestKernels:
    """The numpy sweep and the compiled sweep must be interchangeable."""

    @staticmethod
    def _factored_problem(j, seed):
        gen_rng = np.random.default_rng(seed)
        corr = random_correlation(j, gen_rng)
        lo = np.full(j, -1.5)
        hi = gen_rng.uniform(0.5, 2.5, size=j)
        cho, lo2, hi2 = mvn._order_and_factor(corr, lo, hi)
        gens = mvn._lattice_generators(j - 1)
        shifts = gen_rng.random((6, j - 1))
        return cho, lo2, hi2, gens, shifts

    def test_numpy_kernel_batch_shape(self):
        args = self._factored_problem(4, 0)
        out = _mvnkern_py.sweep_batches(*args, 128)
        assert out.shape == (6,)
        assert ((0.0 <= out) & (out <= 1.0)).all()

    def test_compiled_kernel_agrees(self):
        kern = pytest.importorskip(
            "multipipe._mvnkern", reason="compiled kernel not built"
        )
        for j, seed in [(2, 1), (5, 2), (11, 3)]:
            args = self._factored_problem(j, seed)
            ref = _mvnkern_py.sweep_batches(*args, 512)
            got = kern.sweep_batches(*args, 512)
            np.testing.assert_allclose(got, ref, atol=1e-11)

    def test_backend_env_override(self):
        # import-time selection: just assert the module agrees with itself
        assert mvn.BACKEND in ("python", "compiled")
        assert hasattr(mvn._kern, "sweep_batches")

    def test_lattice_generators_are_stable(self):
        gens = mvn._lattice_generators(4)
        expected = np.sqrt(np.array([2.0, 3.0, 5.0, 7.0])) % 1.0
        np.testing.assert_allclose(gens, expected, atol=1e-15)
        longer = mvn._lattice_generators(9)
        np.testing.assert_allclose(longer[:4], gens, atol=0)
