"""Data model and per-pipeline effect estimators with joint covariance.

Every pipeline j gets one effect estimate ``psi_hat[j]``.  The joint
covariance of the J estimates is assembled from per-observation influence
values: if ``phi[i, j]`` is observation i's influence on pipeline j's
estimator, then

    Sigma_hat = (1/n^2) * phi.T @ phi

which is the plug-in (1/n, no degrees-of-freedom correction) covariance of
the estimates.  Because the same subjects feed every pipeline, off-diagonal
entries capture the usually strong dependence between pipelines, which is
what the downstream tests and pooled estimators exploit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateDataError, InvalidInputError

logger = logging.getLogger(__name__)

#: relative tolerance for the column-centering check on influence matrices
_CENTER_RTOL = 1e-8


@dataclass(frozen=True)
class Dataset:
    """A complete subjects x pipelines rectangle of outcome values.

    Attributes
    ----------
    values : ndarray, shape (n, J)
        One outcome value per subject and pipeline.
    subjects : tuple of str
        Subject ids, one per row, in first-appearance order.
    pipelines : tuple of str
        Pipeline ids, one per column, in first-appearance order.
    exposure : ndarray or None, shape (n,)
        Binary group indicator (0/1) per subject, if the design has one.
    """

    values: np.ndarray
    subjects: Tuple[str, ...]
    pipelines: Tuple[str, ...]
    exposure: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise InvalidInputError("values must be a 2-D (subjects x pipelines) array")
        n, j = values.shape
        if len(self.subjects) != n or len(self.pipelines) != j:
            raise InvalidInputError(
                f"id/value shape mismatch: {len(self.subjects)} subjects, "
                f"{len(self.pipelines)} pipelines, values {values.shape}"
            )
        if j < 1 or n < 2:
            raise InvalidInputError(f"need at least 2 subjects and 1 pipeline, got n={n}, J={j}")
        if not np.isfinite(values).all():
            bad = int(np.count_nonzero(~np.isfinite(values)))
            raise InvalidInputError(f"values contain {bad} non-finite entries (NaN/inf)")
        if self.exposure is not None:
            exposure = np.asarray(self.exposure, dtype=np.int64)
            object.__setattr__(self, "exposure", exposure)
            if exposure.shape != (n,):
                raise InvalidInputError("exposure must have one entry per subject")
            if not np.isin(exposure, (0, 1)).all():
                raise InvalidInputError("exposure must be binary (0/1)")
            if exposure.min() == exposure.max():
                raise InvalidInputError("exposure present but only one group is non-empty")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def j(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_records(
        cls,
        records: Iterable[tuple],
    ) -> "Dataset":
        """Build a Dataset from long-format rows.

        Parameters
        ----------
        records : iterable of (subject, pipeline, value) or
            (subject, pipeline, value, exposure) tuples.

        Raises
        ------
        InvalidInputError
            On duplicate (subject, pipeline) cells, an incomplete rectangle,
            inconsistent per-subject exposure, or non-numeric values.
        """
        subjects: list = []
        pipelines: list = []
        sub_index: dict = {}
        pipe_index: dict = {}
        cells: dict = {}
        exposures: dict = {}
        has_exposure = None

        for rec in records:
            if len(rec) == 3:
                sub, pipe, value = rec
                expo = None
            elif len(rec) == 4:
                sub, pipe, value, expo = rec
            else:
                raise InvalidInputError(f"record must have 3 or 4 fields, got {len(rec)}")
            if has_exposure is None:
                has_exposure = expo is not None
            elif has_exposure != (expo is not None):
                raise InvalidInputError("exposure present on some records but not all")
            sub = str(sub)
            pipe = str(pipe)
            if sub not in sub_index:
                sub_index[sub] = len(subjects)
                subjects.append(sub)
            if pipe not in pipe_index:
                pipe_index[pipe] = len(pipelines)
                pipelines.append(pipe)
            key = (sub, pipe)
            if key in cells:
                raise InvalidInputError(f"duplicate cell for subject {sub!r}, pipeline {pipe!r}")
            try:
                cells[key] = float(value)
            except (TypeError, ValueError):
                raise InvalidInputError(
                    f"non-numeric value {value!r} for subject {sub!r}, pipeline {pipe!r}"
                ) from None
            if expo is not None:
                expo = int(expo)
                if sub in exposures and exposures[sub] != expo:
                    raise InvalidInputError(f"subject {sub!r} has inconsistent exposure values")
                exposures[sub] = expo

        if not cells:
            raise InvalidInputError("no records provided")
        missing = [
            (sub, pipe)
            for sub in subjects
            for pipe in pipelines
            if (sub, pipe) not in cells
        ]
        if missing:
            shown = ", ".join(f"({s},{p})" for s, p in missing[:10])
            more = "" if len(missing) <= 10 else f" and {len(missing) - 10} more"
            raise InvalidInputError(
                f"incomplete rectangle: {len(missing)} missing (subject, pipeline) "
                f"cells: {shown}{more}"
            )

        values = np.empty((len(subjects), len(pipelines)), dtype=np.float64)
        for (sub, pipe), val in cells.items():
            values[sub_index[sub], pipe_index[pipe]] = val
        exposure = None
        if has_exposure:
            exposure = np.array([exposures[s] for s in subjects], dtype=np.int64)
        return cls(
            values=values,
            subjects=tuple(subjects),
            pipelines=tuple(pipelines),
            exposure=exposure,
        )

    def iter_records(self):
        """Yield long-format rows (subject, pipeline, value[, exposure])."""
        for i, sub in enumerate(self.subjects):
            for j, pipe in enumerate(self.pipelines):
                if self.exposure is None:
                    yield sub, pipe, float(self.values[i, j])
                else:
                    yield sub, pipe, float(self.values[i, j]), int(self.exposure[i])


@dataclass(frozen=True)
class InfluenceMatrix:
    """Per-observation influence values, one column per pipeline.

    Columns sum to ~zero by construction (each estimator is asymptotically
    linear with centered influence); this is validated when the matrix is
    turned into joint estimates.
    """

    phi: np.ndarray
    pipelines: Tuple[str, ...]
    subjects: Tuple[str, ...]

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        object.__setattr__(self, "phi", phi)
        if phi.ndim != 2:
            raise InvalidInputError("phi must be 2-D")
        if phi.shape != (len(self.subjects), len(self.pipelines)):
            raise InvalidInputError(
                f"phi shape {phi.shape} does not match "
                f"{len(self.subjects)} subjects x {len(self.pipelines)} pipelines"
            )


@dataclass(frozen=True)
class JointEstimates:
    """Per-pipeline estimates with their joint plug-in covariance.

    ``sigma`` is symmetric positive semi-definite up to rounding but not
    necessarily positive definite -- with fewer subjects than pipelines it is
    always singular, and downstream consumers (GLS pooling, the integrator)
    are built to cope with that.
    """

    psi_hat: np.ndarray
    se: np.ndarray
    sigma: np.ndarray
    n: int
    t_stats: np.ndarray
    pipelines: Tuple[str, ...] = field(default=())

    @property
    def j(self) -> int:
        return self.psi_hat.shape[0]


def _joint_from_influence(
    psi_hat: np.ndarray,
    phi: np.ndarray,
    n: int,
    pipelines: Tuple[str, ...],
) -> JointEstimates:
    sigma = phi.T @ phi / float(n) ** 2
    sigma = (sigma + sigma.T) / 2.0  # exact symmetry despite rounding
    var = np.clip(np.diag(sigma).copy(), 0.0, None)
    se = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = np.where(
            se > 0.0,
            psi_hat / np.where(se > 0.0, se, 1.0),
            np.where(psi_hat == 0.0, 0.0, np.sign(psi_hat) * np.inf),
        )
    return JointEstimates(
        psi_hat=psi_hat,
        se=se,
        sigma=sigma,
        n=int(n),
        t_stats=t_stats,
        pipelines=tuple(pipelines),
    )


def estimate_one_sample(data: Dataset, reference: float) -> Tuple[JointEstimates, InfluenceMatrix]:
    """Mean outcome per pipeline minus a fixed reference value.

    The influence of observation i on pipeline j is simply the centered
    value ``y_ij - mean_j``, so ``se_j^2`` equals the population-style
    (1/n) variance of column j, divided by n.

    Parameters
    ----------
    data : Dataset
        Exposure, if present, is ignored.
    reference : float
        The fixed comparison value subtracted from each pipeline mean.
    """
    if data.n < 2:
        raise InvalidInputError("one-sample estimation needs at least 2 subjects")
    reference = float(reference)
    mean = data.values.mean(axis=0)
    psi_hat = mean - reference
    phi = data.values - mean
    infl = InfluenceMatrix(phi=phi, pipelines=data.pipelines, subjects=data.subjects)
    joint = _joint_from_influence(psi_hat, phi, data.n, data.pipelines)
    return joint, infl


def estimate_two_sample(data: Dataset) -> Tuple[JointEstimates, InfluenceMatrix]:
    """Mean difference between exposure groups, per pipeline.

    Influence values use the estimated group probability pi_hat = mean(x)
    and group means plugged in:

        phi_ij = x_i (y_ij - mean1_j) / pi_hat
                 - (1 - x_i)(y_ij - mean0_j) / (1 - pi_hat)

    i.e. group-centered residuals scaled by the inverse group frequency.
    This is the influence of the mean-difference estimator with all unknowns
    replaced by estimates; it makes the implied variance equal the familiar
    two-sample plug-in formula  s1^2/n1 + s0^2/n0  (population-style
    variances) and leaves the covariance invariant to shifting any
    pipeline's values by a constant.
    """
    if data.exposure is None:
        raise InvalidInputError("two-sample estimation requires an exposure column")
    x = data.exposure.astype(np.float64)
    n = data.n
    n1 = x.sum()
    pi_hat = n1 / n
    if pi_hat <= 0.0 or pi_hat >= 1.0:
        raise InvalidInputError("two-sample estimation requires both exposure groups non-empty")
    mask1 = x == 1.0
    mean1 = data.values[mask1].mean(axis=0)
    mean0 = data.values[~mask1].mean(axis=0)
    psi_hat = mean1 - mean0
    resid = data.values - np.where(mask1[:, None], mean1, mean0)
    scale = np.where(mask1, 1.0 / pi_hat, -1.0 / (1.0 - pi_hat))
    phi = resid * scale[:, None]
    infl = InfluenceMatrix(phi=phi, pipelines=data.pipelines, subjects=data.subjects)
    joint = _joint_from_influence(psi_hat, phi, n, data.pipelines)
    return joint, infl


def influence_to_joint(infl: InfluenceMatrix, psi_hat: Sequence[float]) -> JointEstimates:
    """Assemble joint estimates from a user-supplied influence matrix.

    This is the extension point for estimators beyond the built-in mean
    based ones (e.g. scores of a parametric model): any asymptotically
    linear estimator can be plugged in by providing its psi_hat and
    per-observation influence values.

    Raises
    ------
    InvalidInputError
        If fewer than 2 observations, a length mismatch, or any column is
        not centered (|column sum| > 1e-8 * n * column RMS).
    """
    phi = infl.phi
    n = phi.shape[0]
    if n < 2:
        raise InvalidInputError("need at least 2 observations")
    psi_hat = np.asarray(psi_hat, dtype=np.float64)
    if psi_hat.shape != (phi.shape[1],):
        raise InvalidInputError(
            f"psi_hat length {psi_hat.shape} does not match {phi.shape[1]} pipelines"
        )
    col_sums = phi.sum(axis=0)
    col_rms = np.sqrt((phi**2).mean(axis=0))
    tol = _CENTER_RTOL * n * np.where(col_rms > 0.0, col_rms, 1.0)
    if (np.abs(col_sums) > tol).any():
        worst = int(np.argmax(np.abs(col_sums) / tol))
        raise InvalidInputError(
            f"influence column {infl.pipelines[worst]!r} is not centered "
            f"(sum={col_sums[worst]:.3e})"
        )
    return _joint_from_influence(psi_hat, phi, n, infl.pipelines)


def correlation_of(joint: JointEstimates) -> np.ndarray:
    """Correlation matrix of the estimates, clamped to [-1, 1].

    Raises
    ------
    DegenerateDataError
        If some pipeline has a zero standard error (named in the message).
    """
    se = joint.se
    if (se <= 0.0).any():
        bad = int(np.argmin(se))
        name = joint.pipelines[bad] if joint.pipelines else str(bad)
        raise DegenerateDataError(
            f"pipeline {name!r} has zero standard error; correlation undefined"
        )
    corr = joint.sigma / np.outer(se, se)
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return (corr + corr.T) / 2.0


def contrast(joint: JointEstimates, j: int, k: int) -> Tuple[float, float, float]:
    """Estimate, se and two-sided normal p-value of psi_j - psi_k.

    The variance is var_j + var_k - 2 cov_jk, so strongly correlated
    pipelines can be told apart much more precisely than independent ones
    with the same marginal variances.

    Raises
    ------
    DegenerateDataError
        If the contrast variance is zero (perfectly correlated pipelines
        with equal variance); the estimate and se=0 are attached to the
        exception as attributes.
    """
    jdim = joint.j
    if not (0 <= j < jdim and 0 <= k < jdim):
        raise InvalidInputError(f"contrast indices ({j}, {k}) out of range for J={jdim}")
    if j == k:
        raise InvalidInputError("contrast requires two distinct pipelines")
    estimate = float(joint.psi_hat[j] - joint.psi_hat[k])
    var = float(joint.sigma[j, j] + joint.sigma[k, k] - 2.0 * joint.sigma[j, k])
    var = max(var, 0.0)  # gram-matrix rounding can leave a tiny negative
    se = np.sqrt(var)
    if se == 0.0:
        raise DegenerateDataError(
            f"contrast ({j}, {k}) has zero variance; p-value undefined",
            estimate=estimate,
            se=0.0,
        )
    p_value = float(2.0 * ndtr(-abs(estimate) / se))
    return estimate, se, p_value
