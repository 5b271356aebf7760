"""File ingestion, analysis orchestration, and result serialization.

An analysis run produces four artifacts in the output directory: a flat
``report.csv`` (one row per pipeline plus one per pooled estimator), a
``report.jsonl`` carrying everything needed to re-render figures, and the
two SVG figures.  All serialization goes through ``repr(float)`` /
``json.dumps``, whose shortest round-trip float formatting makes reruns
with identical inputs byte-identical -- worker counts and output paths are
deliberately kept out of the provenance record for the same reason.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from .errors import InvalidInputError
from .estimands import (
    Dataset,
    JointEstimates,
    correlation_of,
    estimate_one_sample,
    estimate_two_sample,
)
from .figures import render_forest, render_heatmap
from .inference import (
    Hypothesis,
    ProportionResult,
    TestResult,
    proportion_summary,
    test_iut,
)
from .mvn import McSettings, adjusted_ci, critical_value, maxtest_pvalue
from .pooling import (
    PooledResult,
    PoolingMethod,
    pool_average,
    pool_constrained_gls,
    pool_gls,
    pool_se,
    pooled_test,
)

logger = logging.getLogger(__name__)

MODES = ("one_sample", "two_sample")

_CSV_HEADER = "pipeline,estimate,se,t,p_unadjusted,p_adjusted,ci_low,ci_high"

#: file names written by an analysis run
REPORT_FILES = ("report.csv", "report.jsonl", "heatmap.svg", "forest.svg")

_TEST_ORDER = (
    "global_max",
    "intersection_union",
    "pooled_average",
    "pooled_pool_se",
    "pooled_gls",
    "pooled_constrained_gls",
)


def _f(x) -> float:
    return float(x)


def read_long_csv(path, mode: str, reference: Optional[float] = None) -> Dataset:
    """Load a long-format CSV (`subject,pipeline,value[,exposure]`).

    ``mode`` is "one_sample" (requires ``reference``; an exposure column,
    if present, is ignored) or "two_sample" (requires the exposure column
    with values 0/1, constant within subject).  Every (subject, pipeline)
    cell must appear exactly once and the subject x pipeline rectangle must
    be complete; violations raise errors naming the offending rows.
    """
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "one_sample" and reference is None:
        raise InvalidInputError("one_sample mode requires a reference value")

    with open(path, "r", encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip().lower() for c in next(reader)]
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file") from None
        want_exposure = mode == "two_sample"
        if header[:3] != ["subject", "pipeline", "value"]:
            raise InvalidInputError(
                f"{path}: header must start with subject,pipeline,value "
                f"(got {','.join(header)})"
            )
        has_exposure = len(header) > 3 and header[3] == "exposure"
        if len(header) > 3 + int(has_exposure):
            raise InvalidInputError(f"{path}: unexpected extra columns {header[4:]}")
        if want_exposure and not has_exposure:
            raise InvalidInputError(f"{path}: two_sample mode requires an exposure column")

        records: List[tuple] = []
        first_row: Dict[Tuple[str, str], int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InvalidInputError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            sub, pipe = row[0].strip(), row[1].strip()
            key = (sub, pipe)
            if key in first_row:
                raise InvalidInputError(
                    f"{path}: duplicate (subject, pipeline) = ({sub}, {pipe}) "
                    f"at rows {first_row[key]} and {lineno}"
                )
            first_row[key] = lineno
            try:
                value = float(row[2])
            except ValueError:
                raise InvalidInputError(
                    f"{path}: row {lineno}: non-numeric value {row[2]!r}"
                ) from None
            if want_exposure:
                try:
                    expo = float(row[3])
                except ValueError:
                    raise InvalidInputError(
                        f"{path}: row {lineno}: non-numeric exposure {row[3]!r}"
                    ) from None
                if expo not in (0.0, 1.0):
                    raise InvalidInputError(
                        f"{path}: row {lineno}: exposure must be 0 or 1, got {row[3]!r}"
                    )
                records.append((sub, pipe, value, int(expo)))
            else:
                records.append((sub, pipe, value))
    if not records:
        raise InvalidInputError(f"{path}: no data rows")
    return Dataset.from_records(records)


def write_long_csv(data: Dataset, path) -> None:
    """Write a Dataset back out in the long CSV format (round-trip safe)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = "subject,pipeline,value" + ("" if data.exposure is None else ",exposure")
        fh.write(cols + "\n")
        for rec in data.iter_records():
            if len(rec) == 3:
                fh.write(f"{rec[0]},{rec[1]},{rec[2]!r}\n")
            else:
                fh.write(f"{rec[0]},{rec[1]},{rec[2]!r},{rec[3]}\n")


def reorder_pipelines(correlation) -> Tuple[int, ...]:
    """Display order from average-linkage clustering of 1 - correlation.

    Distances between merged clusters follow the size-weighted average
    rule; when several pairs are exactly tied, the pair containing the
    smallest original index wins, so an identity correlation keeps the
    original order.  Returns the dendrogram's leaf order.
    """
    corr = np.asarray(correlation, dtype=np.float64)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise InvalidInputError(f"correlation must be square, got shape {corr.shape}")
    j = corr.shape[0]
    if j == 1:
        return (0,)
    dist = np.clip(1.0 - (corr + corr.T) / 2.0, 0.0, None)
    np.fill_diagonal(dist, np.inf)
    leaves: List[Tuple[int, ...]] = [(i,) for i in range(j)]
    sizes = np.ones(j)
    minleaf = np.arange(j)
    alive = np.ones(j, dtype=bool)
    for _ in range(j - 1):
        dmin = dist.min()
        rows, cols = np.nonzero(dist == dmin)
        best = None
        best_key = None
        for a, b in zip(rows, cols):
            if a >= b:
                continue
            key = (min(minleaf[a], minleaf[b]), max(minleaf[a], minleaf[b]))
            if best_key is None or key < best_key:
                best_key, best = key, (int(a), int(b))
        a, b = best
        merged = (
            leaves[a] + leaves[b] if minleaf[a] < minleaf[b] else leaves[b] + leaves[a]
        )
        new_d = (sizes[a] * dist[a] + sizes[b] * dist[b]) / (sizes[a] + sizes[b])
        dist[a, :] = new_d
        dist[:, a] = new_d
        dist[a, a] = np.inf
        dist[b, :] = np.inf
        dist[:, b] = np.inf
        leaves[a] = merged
        sizes[a] += sizes[b]
        minleaf[a] = min(minleaf[a], minleaf[b])
        alive[b] = False
    return leaves[int(np.flatnonzero(alive)[0])]


@dataclass(frozen=True)
class AnalysisReport:
    """Everything an analysis produced, ready for serialization."""

    joint: JointEstimates
    pooled: Tuple[PooledResult, ...]
    tests: Dict[str, TestResult]
    proportion: ProportionResult
    pipeline_order: Tuple[int, ...]
    provenance: Dict[str, object]
    correlation: np.ndarray
    unadjusted_p: np.ndarray
    adjusted_p: np.ndarray
    ci_adjusted: np.ndarray


def analyze(
    data: Dataset,
    mode: str,
    reference: Optional[float] = None,
    alpha: float = 0.05,
    seed: int = 0,
    bootstrap: int = 200,
    workers: int = 1,
    input_name: str = "",
    settings: Optional[McSettings] = None,
) -> AnalysisReport:
    """Run the full per-pipeline + pooled analysis on one dataset.

    Estimates each pipeline's effect with its joint covariance, calibrates
    the simultaneous threshold and adjusted p-values, runs the global and
    intersection-union tests, all four pooled estimators with weight-frozen
    tests, and the proportion-of-affected-pipelines summary (bootstrap CI).
    Deterministic given (data, flags, seed); ``workers`` only affects speed.
    """
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "one_sample":
        if reference is None:
            raise InvalidInputError("one_sample mode requires a reference value")
        joint, _ = estimate_one_sample(data, reference)
    else:
        joint, _ = estimate_two_sample(data)

    settings = settings if settings is not None else McSettings(seed=seed)
    corr = correlation_of(joint)
    t_c = critical_value(corr, alpha, settings)
    global_p, adjusted_p = maxtest_pvalue(joint, settings)
    unadjusted_p = 2.0 * ndtr(-np.abs(joint.t_stats))

    tests: Dict[str, TestResult] = {
        "global_max": TestResult(
            statistic=float(np.max(np.abs(joint.t_stats))),
            p_value=global_p,
            reject=global_p < alpha,
            alpha=alpha,
            hypothesis=Hypothesis.GLOBAL_NULL,
        ),
        "intersection_union": test_iut(unadjusted_p, alpha),
    }
    pooled = (pool_average(joint), pool_se(joint), pool_gls(joint), pool_constrained_gls(joint))
    for result in pooled:
        tests[f"pooled_{result.method.value}"] = pooled_test(result, joint, alpha)

    proportion = proportion_summary(
        joint,
        t_c,
        data,
        estimator=mode,
        bootstrap=bootstrap,
        seed=seed,
        reference=reference if reference is not None else 0.0,
        workers=workers,
    )
    provenance = {
        "version": _package_version(),
        "input": input_name,
        "mode": mode,
        "reference": None if reference is None else float(reference),
        "alpha": float(alpha),
        "seed": int(seed),
        "bootstrap": int(bootstrap),
        "n": data.n,
        "j": data.j,
    }
    return AnalysisReport(
        joint=joint,
        pooled=pooled,
        tests=tests,
        proportion=proportion,
        pipeline_order=reorder_pipelines(corr),
        provenance=provenance,
        correlation=corr,
        unadjusted_p=unadjusted_p,
        adjusted_p=adjusted_p,
        ci_adjusted=adjusted_ci(joint, t_c),
    )


def _package_version() -> str:
    from . import __version__

    return __version__


def report_csv_string(report: AnalysisReport) -> str:
    """Flat CSV: pipeline rows in input order, then the pooled estimators."""
    joint = report.joint
    lines = [_CSV_HEADER]
    for k, name in enumerate(joint.pipelines):
        lines.append(
            ",".join(
                (
                    name,
                    repr(_f(joint.psi_hat[k])),
                    repr(_f(joint.se[k])),
                    repr(_f(joint.t_stats[k])),
                    repr(_f(report.unadjusted_p[k])),
                    repr(_f(report.adjusted_p[k])),
                    repr(_f(report.ci_adjusted[k, 0])),
                    repr(_f(report.ci_adjusted[k, 1])),
                )
            )
        )
    for pooled in report.pooled:
        lines.append(
            ",".join(
                (
                    pooled.method.value,
                    repr(_f(pooled.estimate)),
                    repr(_f(pooled.se)),
                    repr(_f(pooled.statistic)),
                    repr(_f(pooled.p_value)),
                    "",
                    repr(_f(pooled.ci[0])),
                    repr(_f(pooled.ci[1])),
                )
            )
        )
    return "\n".join(lines) + "\n"


def report_jsonl_string(report: AnalysisReport) -> str:
    """One JSON object per line; carries everything `plot` needs."""
    joint = report.joint
    out: List[str] = []

    def emit(obj: dict) -> None:
        out.append(json.dumps(obj, allow_nan=True))

    emit({"record": "provenance", **report.provenance})
    for k, name in enumerate(joint.pipelines):
        emit(
            {
                "record": "pipeline",
                "name": name,
                "estimate": _f(joint.psi_hat[k]),
                "se": _f(joint.se[k]),
                "t": _f(joint.t_stats[k]),
                "p_unadjusted": _f(report.unadjusted_p[k]),
                "p_adjusted": _f(report.adjusted_p[k]),
                "ci_low": _f(report.ci_adjusted[k, 0]),
                "ci_high": _f(report.ci_adjusted[k, 1]),
            }
        )
    emit(
        {
            "record": "correlation",
            "pipelines": list(joint.pipelines),
            "matrix": [[_f(v) for v in row] for row in report.correlation],
        }
    )
    emit({"record": "order", "indices": [int(i) for i in report.pipeline_order]})
    for pooled in report.pooled:
        emit(
            {
                "record": "pooled",
                "method": pooled.method.value,
                "estimate": _f(pooled.estimate),
                "weights": [_f(w) for w in pooled.weights],
                "se": _f(pooled.se),
                "statistic": _f(pooled.statistic),
                "p_value": _f(pooled.p_value),
                "ci_low": _f(pooled.ci[0]),
                "ci_high": _f(pooled.ci[1]),
                "kappa": None if pooled.kappa is None else _f(pooled.kappa),
                "eigen_dropped": int(pooled.eigen_dropped),
            }
        )
    for name in _TEST_ORDER:
        t = report.tests[name]
        emit(
            {
                "record": "test",
                "name": name,
                "hypothesis": t.hypothesis.value,
                "statistic": _f(t.statistic),
                "p_value": _f(t.p_value),
                "reject": bool(t.reject),
                "alpha": _f(t.alpha),
                "ci_low": None if t.ci is None else _f(t.ci[0]),
                "ci_high": None if t.ci is None else _f(t.ci[1]),
            }
        )
    prop = report.proportion
    emit(
        {
            "record": "proportion",
            "eta_nonparametric": _f(prop.eta_nonparametric),
            "eta_parametric": _f(prop.eta_parametric),
            "se_delta": _f(prop.se_delta),
            "ci_low": _f(prop.ci_bootstrap[0]),
            "ci_high": _f(prop.ci_bootstrap[1]),
            "t_c": _f(prop.t_c),
        }
    )
    return "\n".join(out) + "\n"


def render_report_figures(report: AnalysisReport) -> Tuple[str, str]:
    """(heatmap SVG, forest SVG) for an in-memory report."""
    heatmap = render_heatmap(
        report.correlation, report.pipeline_order, labels=report.joint.pipelines
    )
    forest = render_forest(
        report.joint,
        report.pooled,
        report.proportion.t_c,
        reference=0.0,
        order=report.pipeline_order,
    )
    return heatmap, forest


def write_report(report: AnalysisReport, out_dir) -> List[str]:
    """Write report.csv, report.jsonl, heatmap.svg, forest.svg; return paths."""
    os.makedirs(out_dir, exist_ok=True)
    heatmap, forest = render_report_figures(report)
    contents = {
        "report.csv": report_csv_string(report),
        "report.jsonl": report_jsonl_string(report),
        "heatmap.svg": heatmap,
        "forest.svg": forest,
    }
    paths = []
    for name in REPORT_FILES:
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(contents[name])
        paths.append(path)
    return paths


@dataclass(frozen=True)
class SavedReport:
    """The subset of a report.jsonl needed to re-render the figures."""

    joint: JointEstimates
    pooled: Tuple[PooledResult, ...]
    pipeline_order: Tuple[int, ...]
    correlation: np.ndarray
    t_c: float


def load_report_jsonl(path) -> SavedReport:
    """Parse a report.jsonl back into figure-ready structures."""
    pipelines: List[str] = []
    estimates: List[float] = []
    ses: List[float] = []
    ts: List[float] = []
    pooled: List[PooledResult] = []
    order: Optional[Tuple[int, ...]] = None
    corr: Optional[np.ndarray] = None
    t_c: Optional[float] = None
    n_subjects = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path}: invalid JSON line: {exc}") from None
            kind = obj.get("record")
            if kind == "provenance":
                n_subjects = int(obj.get("n", 0))
            elif kind == "pipeline":
                pipelines.append(str(obj["name"]))
                estimates.append(float(obj["estimate"]))
                ses.append(float(obj["se"]))
                ts.append(float(obj["t"]))
            elif kind == "correlation":
                corr = np.asarray(obj["matrix"], dtype=np.float64)
            elif kind == "order":
                order = tuple(int(i) for i in obj["indices"])
            elif kind == "pooled":
                pooled.append(
                    PooledResult(
                        method=PoolingMethod(obj["method"]),
                        estimate=float(obj["estimate"]),
                        weights=np.asarray(obj["weights"], dtype=np.float64),
                        se=float(obj["se"]),
                        statistic=float(obj["statistic"]),
                        p_value=float(obj["p_value"]),
                        ci=(float(obj["ci_low"]), float(obj["ci_high"])),
                        kappa=None if obj["kappa"] is None else float(obj["kappa"]),
                        eigen_dropped=int(obj["eigen_dropped"]),
                    )
                )
            elif kind == "proportion":
                t_c = float(obj["t_c"])
    if not pipelines or corr is None or order is None or t_c is None:
        raise InvalidInputError(f"{path}: not a complete saved report")
    se = np.asarray(ses, dtype=np.float64)
    joint = JointEstimates(
        psi_hat=np.asarray(estimates, dtype=np.float64),
        se=se,
        sigma=corr * np.outer(se, se),
        n=n_subjects,
        t_stats=np.asarray(ts, dtype=np.float64),
        pipelines=tuple(pipelines),
    )
    return SavedReport(
        joint=joint,
        pooled=tuple(pooled),
        pipeline_order=order,
        correlation=corr,
        t_c=t_c,
    )


def render_saved_figures(saved: SavedReport) -> Tuple[str, str]:
    """(heatmap SVG, forest SVG) re-rendered from a saved report.

    Byte-identical to the figures written alongside the original report:
    every quantity the renderers touch round-trips exactly through JSON.
    """
    heatmap = render_heatmap(
        saved.correlation, saved.pipeline_order, labels=saved.joint.pipelines
    )
    forest = render_forest(
        saved.joint,
        saved.pooled,
        saved.t_c,
        reference=0.0,
        order=saved.pipeline_order,
    )
    return heatmap, forest
