"""Multivariate normal rectangle probabilities and max-test calibration.

The rectangle probability P(lower < Z < upper) for Z ~ N(0, R) is computed
by randomized quasi-Monte Carlo after a separation-of-variables transform:
a permuted, scaled Cholesky-type factorization reorders coordinates so the
least-probable direction is integrated first, and each randomization batch
averages the conditional-probability product over a shifted rank-1 lattice
(square-root-of-primes generators with a tent periodization).  Degenerate
directions -- exactly collinear statistics, or a covariance that is singular
because there are fewer subjects than pipelines -- get a zero pivot and
collapse to deterministic indicator constraints instead of breaking the
factorization.

Everything is deterministic given the seed in :class:`McSettings`.  The
per-sample sweep has two interchangeable kernels: a vectorised numpy one
(the default -- scipy's ufuncs are SIMD-accelerated and win at realistic
lattice sizes) and an optional compiled one that is marginally quicker for
very small point counts.  Set ``MULTIPIPE_MVN_BACKEND=compiled`` or
``=python`` to override the choice; see :data:`BACKEND` for what import
time picked and ``benchmarks/bench_mvn.py`` for the numbers behind the
default.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConvergenceError, InvalidInputError
from .estimands import JointEstimates, correlation_of

logger = logging.getLogger(__name__)

_BACKEND_ENV = os.environ.get("MULTIPIPE_MVN_BACKEND", "python").strip().lower()
if _BACKEND_ENV == "compiled":
    try:
        from . import _mvnkern as _kern  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        logger.warning(
            "MULTIPIPE_MVN_BACKEND=compiled but the extension is not built; "
            "using the numpy kernel"
        )
        from . import _mvnkern_py as _kern

        BACKEND = "python"
else:
    if _BACKEND_ENV not in ("", "python"):
        logger.warning(
            "unknown MULTIPIPE_MVN_BACKEND=%r; using the numpy kernel", _BACKEND_ENV
        )
    from . import _mvnkern_py as _kern

    BACKEND = "python"

#: pivot threshold below which a direction is treated as deterministic
_PIVOT_TOL = 1e-10

#: symmetry / unit-diagonal / eigenvalue tolerance on input correlations
_CORR_TOL = 1e-8

#: starting lattice size per randomization batch
_N0 = 256


@dataclass(frozen=True)
class McSettings:
    """Budget and reproducibility knobs for the integrator.

    Attributes
    ----------
    seed : int
        Seed for the randomized lattice shifts; same seed, same result.
    target_abs_error : float
        Stop refining once the standard error across randomization batches
        drops below this.
    max_samples : int
        Cap on total integrand evaluations.
    batch : int
        Number of independently shifted lattice replications; the spread
        across them is the error estimate.
    """

    seed: int = 0
    target_abs_error: float = 5e-4
    max_samples: int = 2**20
    batch: int = 10

    def validate(self) -> None:
        if self.target_abs_error <= 0.0:
            raise InvalidInputError("target_abs_error must be positive")
        if self.max_samples < 1000:
            raise InvalidInputError("max_samples must be at least 1000")
        if self.batch < 2:
            raise InvalidInputError("batch must be at least 2 (needed for the error estimate)")


@dataclass(frozen=True)
class RectProb:
    """A rectangle probability with its Monte Carlo error estimate."""

    p: float
    error_estimate: float
    samples_used: int


def _validate_corr(corr) -> np.ndarray:
    corr = np.asarray(corr, dtype=np.float64)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise InvalidInputError(f"correlation matrix must be square, got shape {corr.shape}")
    if not np.isfinite(corr).all():
        raise InvalidInputError("correlation matrix contains non-finite entries")
    if np.abs(corr - corr.T).max() > _CORR_TOL:
        raise InvalidInputError("correlation matrix is not symmetric")
    corr = (corr + corr.T) / 2.0
    if np.abs(np.diag(corr) - 1.0).max() > _CORR_TOL:
        raise InvalidInputError("correlation matrix must have a unit diagonal")
    eigvals = np.linalg.eigvalsh(corr)
    if eigvals[0] < -_CORR_TOL:
        raise InvalidInputError(
            f"correlation matrix is not positive semi-definite "
            f"(smallest eigenvalue {eigvals[0]:.3e})"
        )
    if eigvals[0] < 0.0:
        # clip the numerically-negative tail so the factorization sees PSD
        vals, vecs = np.linalg.eigh(corr)
        corr = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        corr = (corr + corr.T) / 2.0
    return corr


def _validate_bounds(j_dim: int, lower, upper) -> Tuple[np.ndarray, np.ndarray]:
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if lower.shape != (j_dim,) or upper.shape != (j_dim,):
        raise InvalidInputError(
            f"bounds must both have length {j_dim}, got {lower.shape} and {upper.shape}"
        )
    if np.isnan(lower).any() or np.isnan(upper).any():
        raise InvalidInputError("bounds must not contain NaN")
    if not (lower < upper).all():
        raise InvalidInputError("need lower < upper in every coordinate")
    return lower, upper


def _lattice_generators(d: int) -> np.ndarray:
    """Fractional parts of sqrt(prime) -- classic rank-1 lattice generators."""
    if d == 0:
        return np.empty(0)
    primes: list = []
    limit = 32
    while len(primes) < d:
        limit *= 2
        sieve = np.ones(limit, dtype=bool)
        sieve[:2] = False
        for p in range(2, int(limit**0.5) + 1):
            if sieve[p]:
                sieve[p * p :: p] = False
        primes = np.flatnonzero(sieve).tolist()
    return np.sqrt(np.array(primes[:d], dtype=np.float64)) % 1.0


def _order_and_factor(
    corr: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = _PIVOT_TOL,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scaled, permuted Cholesky-type factor plus transformed bounds.

    Coordinates are reordered greedily so the dimension with the smallest
    conditional probability mass is integrated first (this concentrates the
    integrand's variation in the early, well-sampled lattice coordinates).
    Rows are rescaled so surviving pivots become exactly 1.0; directions
    whose residual variance falls below ``tol`` get an all-zero column and
    are handled as deterministic constraints by the sweep kernels.
    """
    cho = np.array(corr, dtype=np.float64)
    lo = np.array(lower, dtype=np.float64)
    hi = np.array(upper, dtype=np.float64)
    j_dim = cho.shape[0]

    # guard against slightly non-unit diagonals surviving the eigen-clip
    scale = np.sqrt(np.clip(np.diag(cho), 0.0, None))
    scale[scale == 0.0] = 1.0
    lo /= scale
    hi /= scale
    cho /= scale
    cho /= scale[:, None]

    y = np.zeros(j_dim)
    sqtp = math.sqrt(2.0 * math.pi)
    for k in range(j_dim):
        eps_k = (k + 1) * tol
        best = k
        ck = 0.0
        best_mass = np.inf
        lo_b = hi_b = 0.0
        for i in range(k, j_dim):
            if cho[i, i] > tol:
                ci = math.sqrt(cho[i, i])
                s = float(cho[i, :k] @ y[:k]) if k > 0 else 0.0
                lo_i = (lo[i] - s) / ci
                hi_i = (hi[i] - s) / ci
                mass = ndtr(hi_i) - ndtr(lo_i)
                if mass <= best_mass:
                    ck = ci
                    best_mass = mass
                    lo_b, hi_b = lo_i, hi_i
                    best = i
        if best > k:
            _symmetric_swap(cho, k, best)
            lo[[k, best]] = lo[[best, k]]
            hi[[k, best]] = hi[[best, k]]
        if ck > eps_k:
            cho[k, k] = ck
            cho[k, k + 1 :] = 0.0
            for i in range(k + 1, j_dim):
                cho[i, k] /= ck
                cho[i, k + 1 : i + 1] -= cho[i, k] * cho[k + 1 : i + 1, k]
            if abs(best_mass) > tol:
                y[k] = (math.exp(-lo_b * lo_b / 2.0) - math.exp(-hi_b * hi_b / 2.0)) / (
                    sqtp * best_mass
                )
            else:
                # conditional mass ~0: fall back to an endpoint/midpoint
                y[k] = (lo_b + hi_b) / 2.0
                if lo_b < -10.0:
                    y[k] = hi_b
                elif hi_b > 10.0:
                    y[k] = lo_b
            cho[k, : k + 1] /= ck
            lo[k] /= ck
            hi[k] /= ck
        else:
            cho[k:, k] = 0.0
            y[k] = (lo[k] + hi[k]) / 2.0
    return np.ascontiguousarray(cho), lo, hi


def _symmetric_swap(cho: np.ndarray, k: int, m: int) -> None:
    """Swap variables k < m in the half-factored lower-triangular storage."""
    cho[m, m] = cho[k, k]
    tmp = cho[m, :k].copy()
    cho[m, :k] = cho[k, :k]
    cho[k, :k] = tmp
    tmp = cho[m + 1 :, m].copy()
    cho[m + 1 :, m] = cho[m + 1 :, k]
    cho[m + 1 :, k] = tmp
    tmp = cho[k + 1 : m, k].copy()
    cho[k + 1 : m, k] = cho[m, k + 1 : m]
    cho[m, k + 1 : m] = tmp


def _initial_points(settings: McSettings) -> int:
    n_pts = _N0
    while settings.batch * n_pts > settings.max_samples and n_pts > 8:
        n_pts //= 2
    return max(n_pts, 8)


def rect_prob(corr, lower, upper, settings: Optional[McSettings] = None) -> RectProb:
    """P(lower < Z < upper) for Z ~ N(0, corr).

    Parameters
    ----------
    corr : (J, J) array_like
        Correlation matrix: symmetric, unit diagonal, PSD up to -1e-8
        (small negative eigenvalues are clipped).
    lower, upper : (J,) array_like
        Rectangle bounds, ``lower < upper`` elementwise; infinities allowed.
    settings : McSettings, optional
        Defaults to ``McSettings()``.

    Returns
    -------
    RectProb
        Probability in [0, 1], the empirical standard error across the
        randomization batches, and the number of integrand evaluations.
    """
    s = settings if settings is not None else McSettings()
    s.validate()
    corr = _validate_corr(corr)
    j_dim = corr.shape[0]
    lower, upper = _validate_bounds(j_dim, lower, upper)

    if j_dim == 1:
        p = float(ndtr(upper[0]) - ndtr(lower[0]))
        return RectProb(p=min(max(p, 0.0), 1.0), error_estimate=0.0, samples_used=0)

    cho, lo, hi = _order_and_factor(corr, lower, upper)
    gen = _lattice_generators(j_dim - 1)
    rng = np.random.default_rng(s.seed)
    n_pts = _initial_points(s)
    used = 0
    while True:
        shifts = rng.random((s.batch, j_dim - 1))
        means = _kern.sweep_batches(cho, lo, hi, gen, shifts, n_pts)
        used += s.batch * n_pts
        p = float(np.mean(means))
        err = float(np.std(means, ddof=1) / math.sqrt(s.batch))
        if err <= s.target_abs_error:
            break
        if used + 2 * s.batch * n_pts > s.max_samples:
            logger.debug(
                "rect_prob stopped at error %.2e > target %.2e after %d samples",
                err,
                s.target_abs_error,
                used,
            )
            break
        n_pts *= 2
    return RectProb(p=min(max(p, 0.0), 1.0), error_estimate=err, samples_used=used)


def critical_value(corr, alpha: float, settings: Optional[McSettings] = None) -> float:
    """Symmetric bound t_c with P(all |Z_j| <= t_c) = 1 - alpha.

    Solved by bisection on t in [0, 10] against a fixed randomization (the
    same lattice shifts are reused at every t, making the bisected function
    deterministic and monotone), to a bracket width of 1e-4.  The result
    always lies between the one-test quantile z_{1-alpha/2} (perfect
    dependence) and the Bonferroni quantile z_{1-alpha/(2J)}.
    """
    s = settings if settings is not None else McSettings()
    s.validate()
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    corr = _validate_corr(corr)
    j_dim = corr.shape[0]

    ones = np.ones(j_dim)
    cho, lo1, hi1 = _order_and_factor(corr, -ones, ones)
    gen = _lattice_generators(j_dim - 1)
    rng = np.random.default_rng(s.seed)
    shifts = rng.random((s.batch, j_dim - 1))

    def phat(t: float, n_pts: int) -> Tuple[float, float]:
        means = _kern.sweep_batches(cho, t * lo1, t * hi1, gen, shifts, n_pts)
        return float(np.mean(means)), float(np.std(means, ddof=1) / math.sqrt(s.batch))

    # pilot run near the Bonferroni bound fixes the per-evaluation budget
    t_probe = min(max(float(-ndtri(alpha / (2.0 * j_dim))), 1e-3), 10.0)
    n_pts = _initial_points(s)
    used = 0
    while True:
        _, err = phat(t_probe, n_pts)
        used += s.batch * n_pts
        if err <= s.target_abs_error or used + 2 * s.batch * n_pts > s.max_samples:
            break
        n_pts *= 2

    goal = 1.0 - alpha
    t_lo, t_hi = 0.0, 10.0  # p(0) = 0 < goal holds by construction
    p_hi, err_hi = phat(t_hi, n_pts)
    if p_hi < goal:
        raise ConvergenceError(
            f"no sign change on [0, 10]: p(10) = {p_hi:.6f} +- {err_hi:.1e} "
            f"is below 1 - alpha = {goal:.6f}"
        )
    while t_hi - t_lo > 1e-4:
        mid = 0.5 * (t_lo + t_hi)
        p_mid, _ = phat(mid, n_pts)
        if p_mid < goal:
            t_lo = mid
        else:
            t_hi = mid
    return 0.5 * (t_lo + t_hi)


def maxtest_pvalue(
    joint: JointEstimates, settings: Optional[McSettings] = None
) -> Tuple[float, np.ndarray]:
    """Global max-test p-value and per-pipeline adjusted p-values.

    ``adjusted_p[j] = 1 - P(all |Z_k| <= |t_j|)`` under the estimated joint
    correlation -- the single-step adjustment based on the maximum statistic.
    The global p-value is the adjusted p-value at the largest |t_j|, so it
    equals ``min(adjusted_p)`` by construction.
    """
    s = settings if settings is not None else McSettings()
    corr = correlation_of(joint)
    t_abs = np.abs(joint.t_stats)
    j_dim = t_abs.shape[0]
    adjusted = np.empty(j_dim)
    ones = np.ones(j_dim)
    for j in range(j_dim):
        if t_abs[j] == 0.0:
            adjusted[j] = 1.0
        else:
            inside = rect_prob(corr, -t_abs[j] * ones, t_abs[j] * ones, s).p
            adjusted[j] = min(max(1.0 - inside, 0.0), 1.0)
    global_p = float(adjusted[int(np.argmax(t_abs))])
    return global_p, adjusted


def adjusted_ci(joint: JointEstimates, t_c: float) -> np.ndarray:
    """Simultaneous confidence intervals psi_hat_j +- t_c * se_j.

    Returns a (J, 2) array of (low, high) rows.  An interval excludes zero
    exactly when |t_j| > t_c, tying the intervals to the max-test decision.
    """
    if t_c < 0.0:
        raise InvalidInputError(f"t_c must be nonnegative, got {t_c}")
    half = t_c * joint.se
    return np.column_stack((joint.psi_hat - half, joint.psi_hat + half))
