"""Scenario construction, data generation, and the Monte Carlo study driver.

Three stock scenarios share one generative model: a latent outcome
``N(beta * exposure, 1)`` common to all pipelines, plus pipeline-specific
noise drawn from a multivariate normal with the scenario covariance.
Scenario 1 has many pipelines with correlated homoscedastic noise (a
15-pipeline equicorrelated block and 5 independent pipelines), scenario 2
a few pipelines with independent heteroscedastic noise, and scenario 3
many pipelines with correlated heteroscedastic noise.

The covariances are calibrated (see ``scripts/fit_scenarios.py``) so the
large-sample weight tables of the pooling estimators land on fixed
reference values: scenario 1 gls = 2% / 14% (block / independent),
scenario 2 pool-se = gls = (8, 82, 4, 3, 2, 1)% with sd(gls)/sd(average)
= 0.76, scenario 3 pool-se = 3.8% / (38, 2, 1.3, 1, 0.6)% and gls = 0.6% /
(81, 4, 3, 2, 1)%.  The calibration is exact whenever the target table is
itself exactly normalizable; scenario 3's gls row absorbs the rounding of
its target (deviations stay below 0.36 percentage points).

The study driver uses counter-based RNG streams keyed by (seed, cell,
replicate), so results are identical however replicates are scheduled.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .errors import DegenerateDataError, InvalidInputError, NumericalError
from .estimands import Dataset, correlation_of, estimate_two_sample
from .inference import proportion_parametric
from .mvn import McSettings, critical_value
from .pooling import (
    constrain_weights,
    gls_weights,
    pool_average,
    pool_constrained_gls,
    pool_gls,
    pool_se,
    pooled_test,
)

logger = logging.getLogger(__name__)

#: estimator order used in results and CSV output
ESTIMATOR_ORDER = ("average", "pool_se", "gls", "constrained_gls")

_POOLERS = {
    "average": pool_average,
    "pool_se": pool_se,
    "gls": pool_gls,
    "constrained_gls": pool_constrained_gls,
}

#: reduced integrator budget for the per-replicate simultaneous threshold
_STUDY_MC = {"target_abs_error": 1.5e-3, "max_samples": 2**13, "batch": 8}

_CSV_COLUMNS = (
    "scenario",
    "n",
    "beta",
    "estimator",
    "bias",
    "sd",
    "rejection_rate",
    "mc_se",
    "eta_mean",
)


@dataclass(frozen=True)
class ScenarioSpec:
    """A named noise covariance plus the generative-model parameters."""

    name: str
    j: int
    noise_cov: np.ndarray
    beta: float = 0.0
    group_balance: float = 0.5

    def __post_init__(self) -> None:
        cov = np.asarray(self.noise_cov, dtype=np.float64)
        object.__setattr__(self, "noise_cov", cov)
        if cov.shape != (self.j, self.j):
            raise InvalidInputError(
                f"noise_cov shape {cov.shape} does not match J={self.j}"
            )
        if not np.isfinite(cov).all() or np.abs(cov - cov.T).max() > 1e-8:
            raise InvalidInputError("noise_cov must be finite and symmetric")
        eigvals = np.linalg.eigvalsh((cov + cov.T) / 2.0)
        if eigvals[0] < -1e-8 * max(1.0, eigvals[-1]):
            raise NumericalError(
                f"noise_cov is not positive semi-definite "
                f"(smallest eigenvalue {eigvals[0]:.3e})"
            )
        if not 0.0 < self.group_balance < 1.0:
            raise InvalidInputError("group_balance must be in (0, 1)")


@dataclass(frozen=True)
class SimConfig:
    scenarios: Tuple[ScenarioSpec, ...]
    n_grid: Tuple[int, ...]
    betas: Tuple[float, ...]
    replicates: int = 1000
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self) -> None:
        # accept scenario ids ("s2") alongside full specs
        specs = tuple(
            build_scenario(s) if isinstance(s, str) else s for s in self.scenarios
        )
        for s in specs:
            if not isinstance(s, ScenarioSpec):
                raise InvalidInputError(
                    f"scenarios must be ScenarioSpec or scenario ids, got {type(s).__name__}"
                )
        object.__setattr__(self, "scenarios", specs)
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.scenarios:
            raise InvalidInputError("need at least one scenario")
        if not self.n_grid or min(self.n_grid) < 2:
            raise InvalidInputError("per-group sizes must all be >= 2")
        if not self.betas:
            raise InvalidInputError("need at least one effect size")
        if self.replicates < 1:
            raise InvalidInputError("replicates must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError(f"alpha must be in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class CellResult:
    """Aggregates for one (scenario, n, beta, estimator) cell."""

    scenario: str
    n: int
    beta: float
    estimator: str
    bias: float
    sd: Optional[float]
    rejection_rate: float
    mc_se: float
    eta_mean: float


@dataclass(frozen=True)
class SimResults:
    """Study output: per-cell rows plus per-scenario weight tables.

    ``failures`` counts discarded replicates per (scenario, n, beta) cell;
    cells where more than 1% of replicates failed are listed in ``flagged``.
    """

    rows: Tuple[CellResult, ...]
    weight_tables: Dict[str, Dict[str, np.ndarray]]
    failures: Dict[Tuple[str, int, float], int]
    flagged: Tuple[Tuple[str, int, float], ...]

    def to_csv_string(self) -> str:
        lines = [",".join(_CSV_COLUMNS)]
        for r in self.rows:
            lines.append(
                ",".join(
                    (
                        r.scenario,
                        str(r.n),
                        repr(float(r.beta)),
                        r.estimator,
                        repr(float(r.bias)),
                        "" if r.sd is None else repr(float(r.sd)),
                        repr(float(r.rejection_rate)),
                        repr(float(r.mc_se)),
                        repr(float(r.eta_mean)),
                    )
                )
            )
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_string())


def _equicorrelated(size: int, variance: float, rho: float) -> np.ndarray:
    return variance * (np.full((size, size), rho) + (1.0 - rho) * np.eye(size))


def _scenario_one() -> ScenarioSpec:
    cov = np.zeros((20, 20))
    cov[:15, :15] = _equicorrelated(15, 3.0, 3.0 / 7.0)
    cov[15:, 15:] = 3.0 * np.eye(5)
    return ScenarioSpec(name="s1", j=20, noise_cov=cov)


def _scenario_two() -> ScenarioSpec:
    target = np.array([0.08, 0.82, 0.04, 0.03, 0.02, 0.01])
    # scale solving sd(gls)/sd(average) = 0.76 on the full estimate covariance
    ratio2 = 0.76**2
    c = 36.0 * (1.0 - ratio2) / (ratio2 * float(np.sum(1.0 / target)) - 36.0)
    return ScenarioSpec(name="s2", j=6, noise_cov=np.diag(c / target))


def _scenario_three() -> ScenarioSpec:
    se_target = np.array([0.38, 0.02, 0.013, 0.01, 0.006])
    scale = 0.0912
    tau2_block = scale / 0.038
    indep = scale / se_target
    # block correlation matching the gls block/first-independent ratio
    a = indep[0] * 0.81 / 0.006
    rho = (a / tau2_block - 1.0) / 14.0
    cov = np.zeros((20, 20))
    cov[:15, :15] = _equicorrelated(15, tau2_block, rho)
    cov[15:, 15:] = np.diag(indep)
    return ScenarioSpec(name="s3", j=20, noise_cov=cov)


_SCENARIOS = {"s1": _scenario_one, "s2": _scenario_two, "s3": _scenario_three}


def build_scenario(scenario_id: str) -> ScenarioSpec:
    """Return one of the stock scenarios ("s1", "s2", or "s3")."""
    key = str(scenario_id).lower()
    if key not in _SCENARIOS:
        raise InvalidInputError(
            f"unknown scenario {scenario_id!r}; expected one of {sorted(_SCENARIOS)}"
        )
    return _SCENARIOS[key]()


def _noise_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # positive semi-definite but singular: factor through eigensystem
        vals, vecs = np.linalg.eigh((cov + cov.T) / 2.0)
        if vals[0] < -1e-8 * max(1.0, vals[-1]):
            raise NumericalError(
                "noise covariance is not positive semi-definite; cannot factor"
            ) from None
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def simulate_dataset(
    spec: ScenarioSpec, n_per_group: int, rng: np.random.Generator
) -> Dataset:
    """Draw one balanced two-group dataset from the scenario model.

    ``n_per_group`` subjects get exposure 1 and as many get exposure 0; the
    latent outcome is N(beta * exposure, 1) and every pipeline observes it
    plus correlated noise.  Deterministic given the generator state.
    """
    if n_per_group < 2:
        raise InvalidInputError(f"n_per_group must be >= 2, got {n_per_group}")
    n = 2 * n_per_group
    exposure = np.concatenate([np.ones(n_per_group), np.zeros(n_per_group)])
    latent = spec.beta * exposure + rng.standard_normal(n)
    factor = _noise_factor(spec.noise_cov)
    noise = rng.standard_normal((n, spec.j)) @ factor.T
    values = latent[:, np.newaxis] + noise
    return Dataset(
        values=values,
        subjects=tuple(f"s{i + 1:04d}" for i in range(n)),
        pipelines=tuple(f"p{j + 1:02d}" for j in range(spec.j)),
        exposure=exposure,
    )


def large_sample_weights(spec: ScenarioSpec) -> Dict[str, np.ndarray]:
    """Weight table each pooling estimator would use with a known covariance.

    The estimate covariance implied by the model is the shared latent
    variance (a matrix of ones) plus the noise covariance, up to a 4/n
    factor that cancels in every weight formula.  Inverse-variance weights
    are driven by the pipeline-specific noise alone -- the shared latent
    component adds the same variance everywhere and carries no information
    about relative precision -- so with no noise at all they fall back to
    equal weights, as do all other estimators.
    """
    full = np.ones((spec.j, spec.j)) + spec.noise_cov
    average = np.full(spec.j, 1.0 / spec.j)
    noise_var = np.diag(spec.noise_cov).copy()
    if (noise_var <= 0.0).any():
        # limit of 1/variance weighting: zero-noise pipelines dominate
        zero = noise_var <= 0.0
        se_w = zero / zero.sum()
    else:
        inv = 1.0 / noise_var
        se_w = inv / inv.sum()
    gls, _ = gls_weights(full)
    constrained, _ = constrain_weights(gls)
    return {
        "average": average,
        "pool_se": se_w,
        "gls": gls,
        "constrained_gls": constrained,
    }


def _one_replicate(
    spec: ScenarioSpec,
    n_per_group: int,
    beta: float,
    seed: int,
    cell_idx: int,
    rep_idx: int,
    alpha: float,
):
    """Simulate, estimate, pool, test; returns (estimates, rejects, eta) or an error string."""
    stream = np.random.SeedSequence(seed, spawn_key=(cell_idx, rep_idx))
    data_seed, mc_seed_src = stream.spawn(2)
    rng = np.random.default_rng(data_seed)
    data = simulate_dataset(dataclasses.replace(spec, beta=beta), n_per_group, rng)
    try:
        joint, _ = estimate_two_sample(data)
        estimates = {}
        rejects = {}
        for name in ESTIMATOR_ORDER:
            pooled = _POOLERS[name](joint)
            estimates[name] = pooled.estimate
            rejects[name] = pooled_test(pooled, joint, alpha).reject
        mc_seed = int(mc_seed_src.generate_state(1, dtype=np.uint64)[0])
        t_c = critical_value(
            correlation_of(joint), alpha, McSettings(seed=mc_seed, **_STUDY_MC)
        )
        eta = proportion_parametric(joint.t_stats, t_c)
        return estimates, rejects, eta, None
    except (DegenerateDataError, NumericalError, np.linalg.LinAlgError) as exc:
        return None, None, None, f"{type(exc).__name__}: {exc}"


def run_study(config: SimConfig, workers: int = 1) -> SimResults:
    """Run the full replicate grid and aggregate per-cell statistics.

    Per cell and estimator: bias of the pooled estimate, its empirical SD
    (absent when a single replicate survives), the rejection rate of the
    weight-frozen test at config.alpha with its binomial Monte Carlo
    standard error, and the mean smooth proportion of affected pipelines.
    Failed replicates are excluded, counted, and the cell flagged when they
    exceed 1%.
    """
    cells = [
        (spec, n, beta)
        for spec in config.scenarios
        for n in config.n_grid
        for beta in config.betas
    ]
    rows: List[CellResult] = []
    failures: Dict[Tuple[str, int, float], int] = {}
    flagged: List[Tuple[str, int, float]] = []

    for cell_idx, (spec, n, beta) in enumerate(cells):
        args = [
            (spec, n, beta, config.seed, cell_idx, rep, config.alpha)
            for rep in range(config.replicates)
        ]
        if workers > 1:
            outcomes = Parallel(n_jobs=workers)(delayed(_one_replicate)(*a) for a in args)
        else:
            outcomes = [_one_replicate(*a) for a in args]

        key = (spec.name, n, beta)
        good = [o for o in outcomes if o[3] is None]
        failed = len(outcomes) - len(good)
        failures[key] = failed
        if failed > 0.01 * config.replicates:
            flagged.append(key)
            logger.warning(
                "cell %s: %d of %d replicates failed", key, failed, config.replicates
            )
        if not good:
            continue
        etas = np.array([o[2] for o in good])
        for name in ESTIMATOR_ORDER:
            est = np.array([o[0][name] for o in good])
            rej = np.array([o[1][name] for o in good], dtype=np.float64)
            rate = float(rej.mean())
            rows.append(
                CellResult(
                    scenario=spec.name,
                    n=n,
                    beta=beta,
                    estimator=name,
                    bias=float(est.mean() - beta),
                    sd=float(est.std(ddof=1)) if est.size > 1 else None,
                    rejection_rate=rate,
                    mc_se=math.sqrt(rate * (1.0 - rate) / est.size),
                    eta_mean=float(etas.mean()),
                )
            )

    weight_tables = {
        spec.name: large_sample_weights(spec) for spec in config.scenarios
    }
    return SimResults(
        rows=tuple(rows),
        weight_tables=weight_tables,
        failures=failures,
        flagged=tuple(flagged),
    )
