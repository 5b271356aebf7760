"""Joint analysis of one estimand across many preprocessing pipelines.

Estimate the same effect under every pipeline of a multiverse, get the
joint covariance of those estimates from per-observation influence values,
and aggregate: simultaneous max-statistic inference, four pooling
estimators (average, inverse-variance, GLS, constrained GLS), the
proportion of pipelines showing an effect, Monte Carlo scenario studies,
and report/figure generation with a CLI front end.
"""

from .errors import (
    ConvergenceError,
    DegenerateDataError,
    InvalidInputError,
    MultipipeError,
    NumericalError,
)
from .estimands import (
    Dataset,
    InfluenceMatrix,
    JointEstimates,
    contrast,
    correlation_of,
    estimate_one_sample,
    estimate_two_sample,
    influence_to_joint,
)
from .mvn import (
    BACKEND,
    McSettings,
    RectProb,
    adjusted_ci,
    critical_value,
    maxtest_pvalue,
    rect_prob,
)
from .inference import (
    Hypothesis,
    ProportionResult,
    TestResult,
    proportion_nonparametric,
    proportion_parametric,
    proportion_se_bootstrap,
    proportion_se_delta,
    proportion_summary,
    test_global_null,
    test_iut,
)
from .pooling import (
    PooledResult,
    PoolingMethod,
    constrain_weights,
    gls_weights,
    pool_average,
    pool_constrained_gls,
    pool_gls,
    pool_se,
    pooled_test,
)
from .simulation import (
    ScenarioSpec,
    SimConfig,
    SimResults,
    build_scenario,
    large_sample_weights,
    run_study,
    simulate_dataset,
)
from .report import (
    AnalysisReport,
    analyze,
    read_long_csv,
    reorder_pipelines,
    write_long_csv,
    write_report,
)
from .figures import render_forest, render_heatmap

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport",
    "BACKEND",
    "ConvergenceError",
    "Dataset",
    "DegenerateDataError",
    "Hypothesis",
    "InfluenceMatrix",
    "InvalidInputError",
    "JointEstimates",
    "McSettings",
    "MultipipeError",
    "NumericalError",
    "PooledResult",
    "PoolingMethod",
    "ProportionResult",
    "RectProb",
    "ScenarioSpec",
    "SimConfig",
    "SimResults",
    "TestResult",
    "adjusted_ci",
    "analyze",
    "build_scenario",
    "constrain_weights",
    "contrast",
    "correlation_of",
    "critical_value",
    "estimate_one_sample",
    "estimate_two_sample",
    "gls_weights",
    "influence_to_joint",
    "large_sample_weights",
    "maxtest_pvalue",
    "pool_average",
    "pool_constrained_gls",
    "pool_gls",
    "pool_se",
    "pooled_test",
    "proportion_nonparametric",
    "proportion_parametric",
    "proportion_se_bootstrap",
    "proportion_se_delta",
    "proportion_summary",
    "read_long_csv",
    "rect_prob",
    "render_forest",
    "render_heatmap",
    "reorder_pipelines",
    "run_study",
    "simulate_dataset",
    "test_global_null",
    "test_iut",
    "write_long_csv",
    "write_report",
]
