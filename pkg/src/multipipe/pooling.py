"""Global-effect estimators pooling the per-pipeline estimates.

Four weighting schemes: the plain average, inverse-variance weights that
ignore correlation, generalized least squares (the minimum-variance
sum-to-one combination under the estimated joint covariance), and a
constrained variant that shrinks the GLS weights toward equal weighting
until every weight lies in [-1, 1].  GLS is computed through the spectral
decomposition so that singular covariances (more pipelines than subjects,
or exactly collinear pipelines) degrade gracefully by truncating tiny
eigenvalues instead of failing.

All pooled standard errors use the full quadratic form w' Sigma w with the
weights held fixed, i.e. the uncertainty of estimated weights is neglected;
this is unreliable for GLS in small samples.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegenerateDataError, InvalidInputError
from .estimands import JointEstimates
from .inference import Hypothesis, TestResult

logger = logging.getLogger(__name__)

#: default relative eigenvalue cutoff for the spectral pseudo-inverse
DEFAULT_EPSILON = 1e-10

#: two-sided level used for the convenience CI stored on PooledResult
_DEFAULT_CI_ALPHA = 0.05


class PoolingMethod(enum.Enum):
    AVERAGE = "average"
    POOL_SE = "pool_se"
    GLS = "gls"
    CONSTRAINED_GLS = "constrained_gls"


@dataclass(frozen=True)
class PooledResult:
    """A pooled estimate, its weights, and a weight-frozen normal test.

    ``ci`` is the two-sided 95% interval; ``kappa`` is the shrinkage
    constant of the constrained variant (None otherwise); ``eigen_dropped``
    counts eigenvalues truncated by the spectral GLS solve.
    """

    method: PoolingMethod
    estimate: float
    weights: np.ndarray
    se: float
    statistic: float
    p_value: float
    ci: Tuple[float, float]
    kappa: Optional[float]
    eigen_dropped: int


def gls_weights(sigma: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> Tuple[np.ndarray, int]:
    """Sum-to-one minimum-variance weights via spectral decomposition.

    Eigenpairs with eigenvalue <= epsilon * lambda_max are truncated; the
    weights are assembled from the retained components as
    ``sum_m (qbar_m / lambda_m) q_m`` normalized by ``sum_m qbar_m^2 /
    lambda_m`` with ``qbar_m`` the sum of eigenvector m's entries.  On
    full-rank input this equals inv(sigma) @ 1 / (1' inv(sigma) 1).

    Returns the weights and the number of eigenvalues dropped.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    vals, vecs = np.linalg.eigh((sigma + sigma.T) / 2.0)
    lam_max = vals[-1]
    if not lam_max > 0.0:
        raise DegenerateDataError(
            "covariance has no positive eigenvalues (rank zero); pooling weights undefined"
        )
    keep = vals > epsilon * lam_max
    dropped = int(np.count_nonzero(~keep))
    vals = vals[keep]
    vecs = vecs[:, keep]
    # sign convention for reproducibility: largest-magnitude entry positive
    flip = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])] < 0.0
    vecs = np.where(flip[np.newaxis, :], -vecs, vecs)
    qbar = vecs.sum(axis=0)
    denom = float(np.sum(qbar * qbar / vals))
    if not denom > 0.0:
        raise DegenerateDataError(
            "pooling undefined: every retained eigenvector sums to zero, "
            "so no sum-to-one combination exists in the retained span"
        )
    weights = vecs @ (qbar / vals) / denom
    return weights, dropped


def constrain_weights(weights: np.ndarray) -> Tuple[np.ndarray, float]:
    """Shrink weights toward 1/J until every coordinate lies in [-1, 1].

    The constrained vector is ``w/(kappa+M) + (1/J)(1 - 1/(kappa+M))`` with
    ``M = max|w|`` and kappa the smallest nonnegative value making all
    entries admissible (kappa solves kappa + M = 1 when M <= 1, leaving the
    weights unchanged).  Sum-to-one is preserved identically.
    """
    w = np.asarray(weights, dtype=np.float64)
    j_dim = w.size
    big = float(np.max(np.abs(w)))
    if big <= 1.0:
        return w.copy(), 1.0 - big

    equal = 1.0 / j_dim

    def shrunk(kappa: float) -> np.ndarray:
        s = kappa + big
        return w / s + equal * (1.0 - 1.0 / s)

    def excess(kappa: float) -> float:
        return float(np.max(np.abs(shrunk(kappa)))) - 1.0

    if excess(0.0) <= 0.0:
        return shrunk(0.0), 0.0
    lo, hi = 0.0, 10.0 * j_dim * big
    if excess(hi) > 0.0:  # pragma: no cover - max|w| -> 1/J < 1 as kappa grows
        raise InvalidInputError("constrained weights: no admissible kappa in the search bracket")
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return shrunk(hi), hi


def _finish(
    method: PoolingMethod,
    joint: JointEstimates,
    weights: np.ndarray,
    kappa: Optional[float],
    eigen_dropped: int,
) -> PooledResult:
    estimate = float(weights @ joint.psi_hat)
    var = float(weights @ joint.sigma @ weights)
    se = math.sqrt(max(var, 0.0))
    if se > 0.0:
        statistic = estimate / se
        p_value = 2.0 * float(ndtr(-abs(statistic)))
    elif estimate == 0.0:
        statistic, p_value = 0.0, 1.0
    else:
        statistic, p_value = math.copysign(math.inf, estimate), 0.0
    zq = float(-ndtri(_DEFAULT_CI_ALPHA / 2.0))
    return PooledResult(
        method=method,
        estimate=estimate,
        weights=weights,
        se=se,
        statistic=statistic,
        p_value=p_value,
        ci=(estimate - zq * se, estimate + zq * se),
        kappa=kappa,
        eigen_dropped=eigen_dropped,
    )


def pool_average(joint: JointEstimates) -> PooledResult:
    """Equal-weight mean of the pipeline estimates."""
    weights = np.full(joint.j, 1.0 / joint.j)
    return _finish(PoolingMethod.AVERAGE, joint, weights, None, 0)


def pool_se(joint: JointEstimates) -> PooledResult:
    """Inverse-variance weights, w_j proportional to 1/sigma_j^2.

    The weights ignore correlations, but the reported standard error does
    not: it is the quadratic form with the full joint covariance.
    """
    variances = np.diag(joint.sigma)
    if (variances <= 0.0).any():
        bad = joint.pipelines[int(np.argmin(variances))]
        raise DegenerateDataError(
            f"inverse-variance weights undefined: pipeline {bad!r} has zero variance"
        )
    inv = 1.0 / variances
    weights = inv / inv.sum()
    return _finish(PoolingMethod.POOL_SE, joint, weights, None, 0)


def pool_gls(joint: JointEstimates, epsilon: float = DEFAULT_EPSILON) -> PooledResult:
    """Generalized least squares pooling under the estimated covariance."""
    weights, dropped = gls_weights(joint.sigma, epsilon)
    if dropped:
        logger.info("gls pooling truncated %d eigenvalue(s)", dropped)
    return _finish(PoolingMethod.GLS, joint, weights, None, dropped)


def pool_constrained_gls(joint: JointEstimates, epsilon: float = DEFAULT_EPSILON) -> PooledResult:
    """GLS shrunk toward equal weights until every weight is in [-1, 1]."""
    raw, dropped = gls_weights(joint.sigma, epsilon)
    weights, kappa = constrain_weights(raw)
    return _finish(PoolingMethod.CONSTRAINED_GLS, joint, weights, kappa, dropped)


def pooled_test(pooled: PooledResult, joint: JointEstimates, alpha: float) -> TestResult:
    """Two-sided normal test of a zero pooled effect, weights held fixed."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    if pooled.weights.shape != (joint.j,):
        raise InvalidInputError("pooled result does not match the joint estimates")
    if not pooled.se > 0.0:
        raise DegenerateDataError(
            f"pooled test undefined: {pooled.method.value} has zero standard error"
        )
    statistic = pooled.estimate / pooled.se
    p_value = 2.0 * float(ndtr(-abs(statistic)))
    zq = float(-ndtri(alpha / 2.0))
    return TestResult(
        statistic=statistic,
        p_value=p_value,
        reject=p_value < alpha,
        alpha=alpha,
        hypothesis=Hypothesis.GLOBAL_NULL,
        ci=(pooled.estimate - zq * pooled.se, pooled.estimate + zq * pooled.se),
    )
