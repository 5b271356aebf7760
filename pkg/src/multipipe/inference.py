"""Tests across pipelines and the proportion-of-affected-pipelines estimators.

Two global hypotheses are supported: "no effect in any pipeline" (rejected
via the max-statistic test calibrated by the joint normal law) and "at least
one pipeline with no effect" (an intersection-union test, rejected only when
every per-pipeline p-value is small).  The proportion of pipelines showing
evidence for an effect comes in a counting and a smoothed variant, with a
delta-method standard error and a subject-level bootstrap interval.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.special import ndtr

from .errors import DegenerateDataError, InvalidInputError
from .estimands import (
    Dataset,
    JointEstimates,
    estimate_one_sample,
    estimate_two_sample,
)
from .mvn import McSettings, maxtest_pvalue

logger = logging.getLogger(__name__)

#: estimator names accepted by the bootstrap
ESTIMATORS = ("one_sample", "two_sample")


class Hypothesis(enum.Enum):
    """Which global null a :class:`TestResult` refers to."""

    GLOBAL_NULL = "global_null"
    AT_LEAST_ONE_NULL = "at_least_one_null"


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    alpha: float
    hypothesis: Hypothesis
    ci: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class ProportionResult:
    """Proportion of pipelines with evidence for an effect, with uncertainty.

    ``eta_nonparametric`` counts statistics beyond the simultaneous threshold
    ``t_c``; ``eta_parametric`` is its smooth expected-count counterpart.
    """

    eta_nonparametric: float
    eta_parametric: float
    se_delta: float
    ci_bootstrap: Tuple[float, float]
    t_c: float


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")


def test_global_null(
    joint: JointEstimates, alpha: float, settings: Optional[McSettings] = None
) -> TestResult:
    """Max-statistic test of "no effect in any pipeline".

    The statistic is ``max_j |t_j|`` and its p-value is calibrated against
    the joint normal distribution of all pipeline statistics, so rejection
    at level alpha coincides with some |t_j| exceeding the simultaneous
    threshold from :func:`multipipe.mvn.critical_value`.
    """
    _check_alpha(alpha)
    global_p, _ = maxtest_pvalue(joint, settings)
    statistic = float(np.max(np.abs(joint.t_stats)))
    return TestResult(
        statistic=statistic,
        p_value=global_p,
        reject=global_p < alpha,
        alpha=alpha,
        hypothesis=Hypothesis.GLOBAL_NULL,
    )


def test_iut(unadjusted_p, alpha: float) -> TestResult:
    """Intersection-union test of "at least one pipeline with no effect".

    Rejects only when every unadjusted per-pipeline p-value falls below
    alpha; no multiplicity adjustment is applied, by design.
    """
    _check_alpha(alpha)
    p = np.asarray(unadjusted_p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError("unadjusted_p must be a non-empty 1-d vector")
    if np.isnan(p).any() or (p < 0.0).any() or (p > 1.0).any():
        raise InvalidInputError("p-values must lie in [0, 1]")
    statistic = float(p.max())
    return TestResult(
        statistic=statistic,
        p_value=statistic,
        reject=statistic < alpha,
        alpha=alpha,
        hypothesis=Hypothesis.AT_LEAST_ONE_NULL,
    )


def _check_threshold(t_c: float) -> None:
    if t_c < 0.0:
        raise InvalidInputError(f"t_c must be nonnegative, got {t_c}")


def proportion_nonparametric(t_stats, t_c: float) -> float:
    """Fraction of pipelines with |t_j| at or beyond the threshold."""
    _check_threshold(t_c)
    t = np.asarray(t_stats, dtype=np.float64)
    return float(np.mean(np.abs(t) >= t_c))


def proportion_parametric(t_stats, t_c: float) -> float:
    """Smooth proportion estimate 1 - mean_j[Phi(t_c - t_j) - Phi(-t_c - t_j)].

    Each term is the normal probability that pipeline j's statistic stays
    inside (-t_c, t_c); the complement averages the evidence for an effect.
    Monotone in every |t_j| and sign-symmetric.
    """
    _check_threshold(t_c)
    t = np.asarray(t_stats, dtype=np.float64)
    inside = ndtr(t_c - t) - ndtr(-t_c - t)
    return float(1.0 - np.mean(inside))


def _normal_pdf(x: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def proportion_se_delta(joint: JointEstimates, t_c: float) -> float:
    """Delta-method standard error of the smooth proportion.

    Propagates only the uncertainty of the estimates themselves (threshold
    and per-pipeline standard errors held fixed): the gradient with respect
    to estimate j is [phi(t_c - t_j) - phi(-t_c - t_j)] / (J * se_j), and
    the variance is the quadratic form with the joint covariance.
    """
    _check_threshold(t_c)
    if (joint.se <= 0.0).any():
        bad = joint.pipelines[int(np.argmin(joint.se))]
        raise DegenerateDataError(
            f"delta-method se undefined: pipeline {bad!r} has zero standard error"
        )
    t = joint.t_stats
    g = (_normal_pdf(t_c - t) - _normal_pdf(-t_c - t)) / (joint.j * joint.se)
    var = float(g @ joint.sigma @ g)
    return math.sqrt(max(var, 0.0))


def _bootstrap_eta(
    data: Dataset,
    estimator: str,
    t_c: float,
    reference: float,
    seed: int,
    rep: int,
) -> Optional[float]:
    """One resample; None when a two-sample draw loses a whole group."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))
    n = data.n
    idx = rng.integers(0, n, size=n)
    if estimator == "two_sample":
        x = data.exposure[idx]
        if x.all() or not x.any():
            return None
        resampled = Dataset(
            values=data.values[idx],
            subjects=tuple(data.subjects[i] for i in idx),
            pipelines=data.pipelines,
            exposure=x,
        )
        joint, _ = estimate_two_sample(resampled)
    else:
        resampled = Dataset(
            values=data.values[idx],
            subjects=tuple(data.subjects[i] for i in idx),
            pipelines=data.pipelines,
        )
        joint, _ = estimate_one_sample(resampled, reference)
    return proportion_parametric(joint.t_stats, t_c)


def proportion_se_bootstrap(
    data: Dataset,
    estimator: str,
    t_c: float,
    b: int,
    seed: int,
    reference: float = 0.0,
    workers: int = 1,
) -> Tuple[float, Tuple[float, float]]:
    """Bootstrap SE and percentile CI for the smooth proportion.

    Subjects (rows) are resampled with replacement, preserving the
    cross-pipeline dependence; estimates, standard errors, and statistics
    are recomputed per replicate while ``t_c`` stays fixed.  Replicate
    streams are keyed by (seed, replicate index), so the result does not
    depend on worker scheduling.

    Returns
    -------
    (se, (low, high))
        Standard deviation across replicates and the 2.5%/97.5% percentiles.
    """
    _check_threshold(t_c)
    if b < 100:
        raise InvalidInputError(f"need at least 100 bootstrap replicates, got {b}")
    if estimator not in ESTIMATORS:
        raise InvalidInputError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    if estimator == "two_sample" and data.exposure is None:
        raise InvalidInputError("two_sample bootstrap needs a dataset with exposure")

    if workers > 1:
        etas = Parallel(n_jobs=workers)(
            delayed(_bootstrap_eta)(data, estimator, t_c, reference, seed, rep)
            for rep in range(b)
        )
    else:
        etas = [_bootstrap_eta(data, estimator, t_c, reference, seed, rep) for rep in range(b)]

    kept = np.array([e for e in etas if e is not None], dtype=np.float64)
    discarded = b - kept.size
    if discarded > 0.1 * b:
        raise DegenerateDataError(
            f"bootstrap discarded {discarded} of {b} replicates "
            "(resamples with an empty exposure group)",
            discarded=discarded,
            replicates=b,
        )
    if discarded:
        logger.info("bootstrap discarded %d of %d replicates", discarded, b)
    se = float(np.std(kept, ddof=1))
    low, high = np.percentile(kept, [2.5, 97.5])
    return se, (float(low), float(high))


def proportion_summary(
    joint: JointEstimates,
    t_c: float,
    data: Dataset,
    estimator: str,
    bootstrap: int = 200,
    seed: int = 0,
    reference: float = 0.0,
    workers: int = 1,
) -> ProportionResult:
    """Bundle both proportion estimates with their uncertainty measures."""
    _, ci = proportion_se_bootstrap(
        data, estimator, t_c, bootstrap, seed, reference=reference, workers=workers
    )
    return ProportionResult(
        eta_nonparametric=proportion_nonparametric(joint.t_stats, t_c),
        eta_parametric=proportion_parametric(joint.t_stats, t_c),
        se_delta=proportion_se_delta(joint, t_c),
        ci_bootstrap=ci,
        t_c=t_c,
    )
