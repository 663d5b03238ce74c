"""
Sweep-level acceptance checks.

Reads what a sweep wrote (manifest.json, summary.csv, per-run trace.csv) and
checks:
- adaptive CG: per-run NMSE non-increasing for t <= 10, inner counts vary in t
- stopping ablation: with the Delta criterion every common NMSE level is
  reached no later than without it (seed-mean curves)
- warm start: oracle WS at i=1 non-increasing and ahead of cold CG-VAMP at
  t=30; practical WS at i=5 ahead of cold CG-VAMP at i=5 at t=20
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.models.schemas import AuditCheck, EvaluationReport, SweepManifest, acg_label
from app.services.harness import SUMMARY_SCHEMA, read_csv
from app.utils.errors import InvalidParameterError

logger = logging.getLogger(__name__)

# Largest NMSE rise between consecutive outer iterations still called non-increasing
NMSE_STEP_TOLERANCE_DB = 0.1
ACG_T_LIMIT = 10
WS_ORACLE_T = 30
WS_ORACLE_MARGIN_DB = 1.0
WS_PRACTICAL_T = 20
WS_PRACTICAL_MARGIN_DB = 0.5

CRITERIA = ("acg", "stopping", "warm_start")


def load_manifest(out_dir: Union[str, Path]) -> SweepManifest:
    path = Path(out_dir) / "manifest.json"
    if not path.exists():
        raise InvalidParameterError(f"no manifest.json in {out_dir}")
    return SweepManifest.model_validate_json(path.read_text(encoding="utf-8"))


def load_summaries(out_dirs: Sequence[Union[str, Path]]) -> pd.DataFrame:
    """summary.csv of every directory, concatenated."""
    paths = [Path(d) / "summary.csv" for d in out_dirs]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise InvalidParameterError(f"no summary.csv at {', '.join(missing)}")
    frames = [read_csv(p, SUMMARY_SCHEMA) for p in paths]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def grid_prefix(cell: str) -> str:
    """d0.25_k1000_cgvamp_acg-d0.015 -> d0.25_k1000."""
    return "_".join(cell.split("_")[:2])


def worst_rise(values: Sequence[float]) -> float:
    """Largest increase between consecutive entries (<= 0 for a non-increasing series)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.max(np.diff(values)))


def _curve(summary: pd.DataFrame, cell: str) -> pd.DataFrame:
    return summary[summary["cell"] == cell].sort_values("t")


def _value_at(curve: pd.DataFrame, t: int) -> Optional[float]:
    match = curve[curve["t"] == t]
    return float(match["nmse_db_mean"].iloc[0]) if not match.empty else None


def _missing(name: str, threshold: float) -> AuditCheck:
    return AuditCheck(name=name, value=float("nan"), threshold=threshold, passed=False)


# ===========================================
# Adaptive CG behavior
# ===========================================

def check_acg_behavior(manifest: SweepManifest) -> EvaluationReport:
    """Per-run NMSE non-increasing for t <= 10 and non-constant inner counts, per adaptive cell."""
    rises: Dict[str, List[float]] = {}
    distinct: Dict[str, List[int]] = {}
    errors = 0
    for record in manifest.cells:
        if "_acg-" not in record.cell:
            continue
        if record.error or not record.trace_path:
            errors += 1
            continue
        trace = read_csv(record.trace_path)
        window = trace[trace["t"] <= ACG_T_LIMIT].sort_values("t")
        rises.setdefault(record.cell, []).append(worst_rise(window["nmse_db"]))
        distinct.setdefault(record.cell, []).append(int(window["inner_iterations"].nunique()))

    checks = [AuditCheck(name="acg_run_errors", value=float(errors), threshold=0.0, passed=errors == 0)]
    for cell in sorted(rises):
        rise = max(rises[cell])
        checks.append(AuditCheck(
            name=f"acg_nmse_non_increasing[{cell}]",
            value=rise,
            threshold=NMSE_STEP_TOLERANCE_DB,
            passed=rise <= NMSE_STEP_TOLERANCE_DB,
        ))
        fewest = min(distinct[cell])
        checks.append(AuditCheck(
            name=f"acg_inner_counts_vary[{cell}]", value=float(fewest), threshold=1.0, passed=fewest > 1
        ))
    return EvaluationReport(criterion="acg", checks=checks)


# ===========================================
# Stopping-criterion ablation
# ===========================================

def time_to_level(curve: pd.DataFrame, level_db: float) -> Optional[float]:
    """Mean cumulative time of the first outer iteration whose mean NMSE is at or below ``level_db``."""
    reached = curve[curve["nmse_db_mean"] <= level_db]
    return float(reached["time_mean"].iloc[0]) if not reached.empty else None


def stopping_lag(with_delta: pd.DataFrame, without_delta: pd.DataFrame) -> Tuple[float, int]:
    """
    Worst (time with Delta - time without Delta) over the NMSE levels both curves reach.

    Levels are every point of either curve between the shallower of the two
    minima and the deeper of the two starting values. Levels above a starting
    value belong to the start transient of one curve and are not compared.
    """
    if with_delta.empty or without_delta.empty:
        return float("nan"), 0
    floor = max(with_delta["nmse_db_mean"].min(), without_delta["nmse_db_mean"].min())
    ceiling = min(with_delta["nmse_db_mean"].iloc[0], without_delta["nmse_db_mean"].iloc[0])
    values = pd.concat([with_delta["nmse_db_mean"], without_delta["nmse_db_mean"]])
    levels = sorted({float(v) for v in values if floor <= v <= ceiling})

    lags = []
    for level in levels:
        t_with = time_to_level(with_delta, level)
        t_without = time_to_level(without_delta, level)
        if t_with is not None and t_without is not None:
            lags.append(t_with - t_without)
    if not lags:
        return float("nan"), 0
    return max(lags), len(lags)


def check_stopping_ablation(
    summary: pd.DataFrame, with_threshold: float = 0.015, without_threshold: float = float("inf")
) -> EvaluationReport:
    """Compare every cell labelled with ``with_threshold`` against its Delta-off twin."""
    label_with = acg_label(with_threshold)
    label_without = acg_label(without_threshold)
    checks: List[AuditCheck] = []
    if summary.empty:
        return EvaluationReport(criterion="stopping", checks=[_missing("stopping_lag_seconds", 0.0)])
    for cell in sorted(set(summary["cell"])):
        if not cell.endswith("_" + label_with):
            continue
        twin = cell[: -len(label_with)] + label_without
        name = f"stopping_lag_seconds[{cell[: -len(label_with) - 1]}]"
        if twin not in set(summary["cell"]):
            checks.append(_missing(name, 0.0))
            continue
        lag, levels = stopping_lag(_curve(summary, cell), _curve(summary, twin))
        logger.info(f"{cell} vs {twin}: worst lag {lag:.3f}s over {levels} NMSE levels")
        checks.append(AuditCheck(name=name, value=lag, threshold=0.0, passed=bool(lag <= 0.0)))
    return EvaluationReport(criterion="stopping", checks=checks)


# ===========================================
# Warm-start benefit
# ===========================================

def check_warm_start_benefit(summary: pd.DataFrame) -> EvaluationReport:
    """Oracle and practical warm start against cold CG-VAMP at equal inner iterations, per grid point."""
    if summary.empty:
        return EvaluationReport(criterion="warm_start", checks=[_missing("ws_cells", 0.0)])
    cells = set(summary["cell"])
    prefixes = sorted({grid_prefix(cell) for cell in cells if "_ws_" in cell})
    checks: List[AuditCheck] = []
    for prefix in prefixes:
        oracle = _curve(summary, f"{prefix}_ws_oracle_i1")
        cold_1 = _curve(summary, f"{prefix}_cgvamp_i1")
        practical = _curve(summary, f"{prefix}_ws_practical_i5")
        cold_5 = _curve(summary, f"{prefix}_cgvamp_i5")

        name = f"ws_oracle_non_increasing[{prefix}]"
        window = oracle[oracle["t"] <= WS_ORACLE_T]
        if window.empty or window["t"].max() < WS_ORACLE_T:
            checks.append(_missing(name, NMSE_STEP_TOLERANCE_DB))
        else:
            rise = worst_rise(window["nmse_db_mean"])
            checks.append(AuditCheck(
                name=name, value=rise, threshold=NMSE_STEP_TOLERANCE_DB,
                passed=rise <= NMSE_STEP_TOLERANCE_DB,
            ))

        for name, warm, cold, t, margin in (
            (f"ws_oracle_gain_db[{prefix}]", oracle, cold_1, WS_ORACLE_T, WS_ORACLE_MARGIN_DB),
            (f"ws_practical_gain_db[{prefix}]", practical, cold_5, WS_PRACTICAL_T, WS_PRACTICAL_MARGIN_DB),
        ):
            warm_db, cold_db = _value_at(warm, t), _value_at(cold, t)
            if warm_db is None or cold_db is None:
                checks.append(_missing(name, margin))
                continue
            gain = cold_db - warm_db
            checks.append(AuditCheck(name=name, value=gain, threshold=margin, passed=gain >= margin))
    return EvaluationReport(criterion="warm_start", checks=checks)


def evaluate(criterion: str, out_dirs: Sequence[Union[str, Path]]) -> EvaluationReport:
    """Run one criterion over the outputs of one or more sweeps."""
    if criterion not in CRITERIA:
        raise InvalidParameterError(f"Unknown criterion {criterion!r}; choose from {', '.join(CRITERIA)}")
    if not out_dirs:
        raise InvalidParameterError("no sweep output directory given")

    if criterion == "acg":
        cells = [record for d in out_dirs for record in load_manifest(d).cells]
        report = check_acg_behavior(SweepManifest(spec_hash="", cells=cells))
    elif criterion == "stopping":
        report = check_stopping_ablation(load_summaries(out_dirs))
    else:
        report = check_warm_start_benefit(load_summaries(out_dirs))

    for check in report.checks:
        level = logging.INFO if check.passed else logging.WARNING
        logger.log(level, f"{check.name}: {check.value:.3e} (threshold {check.threshold:g})")
    return report
