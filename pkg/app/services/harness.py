"""
Experiment harness.

Handles:
- JSON run / sweep configs validated into pydantic models
- Versioned CSV traces (outer rows and inner CG rows)
- Seeded sweeps over (delta, kappa, variant, policy, seed), run in a process pool
- Per-(cell, t) summaries across seeds and a hashed JSON manifest
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from app.models.schemas import (
    AcgConfig,
    CellRecord,
    OperatorSpec,
    RunConfig,
    RunResult,
    SummaryRow,
    SweepManifest,
    SweepSpec,
    TraceRecord,
    acg_label,
)
from app.services.operators import build_operator
from app.services.oracle import make_instance
from app.services.outer_loop import run
from app.utils.errors import CgVampError, InvalidParameterError
from app.utils.numerics import to_db

logger = logging.getLogger(__name__)

TRACE_SCHEMA = "# schema: cgvamp-trace/1"
SUMMARY_SCHEMA = "# schema: cgvamp-summary/1"
# Wall-clock columns; excluded from reproducibility digests
TIMING_COLUMNS = {"time_block_a", "time_block_b", "elapsed"}


# ===========================================
# Config files
# ===========================================

def load_run_config(path: Union[str, Path]) -> RunConfig:
    return RunConfig.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))


def load_sweep_spec(path: Union[str, Path]) -> SweepSpec:
    return SweepSpec.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))


# ===========================================
# CSV traces
# ===========================================

def records_frame(records: Sequence[BaseModel]) -> pd.DataFrame:
    """One row per record; flag lists become ';'-joined strings."""
    rows = []
    for record in records:
        row = record.model_dump()
        if "flags" in row:
            row["flags"] = ";".join(row["flags"])
        rows.append(row)
    return pd.DataFrame(rows)


def write_csv(frame: pd.DataFrame, path: Union[str, Path], schema: str = TRACE_SCHEMA) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(schema + "\n")
        frame.to_csv(f, index=False)
    return path


def read_csv(path: Union[str, Path], schema: str = TRACE_SCHEMA) -> pd.DataFrame:
    """Read a versioned CSV, rejecting files written with another schema."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
    if header != schema:
        raise InvalidParameterError(f"{path} has schema line {header!r}, expected {schema!r}")
    return pd.read_csv(path, skiprows=1, keep_default_na=False, na_values=[""])


def write_run(result: RunResult, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """trace.csv and inner.csv for one run."""
    out_dir = Path(out_dir)
    trace_path = write_csv(records_frame(result.rows), out_dir / "trace.csv")
    inner_path = write_csv(records_frame(result.inner_rows), out_dir / "inner.csv")
    return trace_path, inner_path


def trace_digest(rows: Sequence[TraceRecord]) -> str:
    """Hash of every non-timing trace value."""
    payload = [row.model_dump(mode="json", exclude=TIMING_COLUMNS) for row in rows]
    encoded = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()[:16]


# ===========================================
# Summaries
# ===========================================

def summarize(frames: Dict[str, pd.DataFrame]) -> List[SummaryRow]:
    """
    Mean/std of NMSE, mean inner iterations and mean cumulative time per (cell, t).

    nmse_db_mean is 10 log10 of the mean linear NMSE.
    """
    parts = [frame.assign(cell=cell) for cell, frame in frames.items() if not frame.empty]
    if not parts:
        return []
    merged = pd.concat(parts, ignore_index=True)
    grouped = merged.groupby(["cell", "t"], sort=True).agg(
        runs=("nmse", "size"),
        nmse_mean=("nmse", "mean"),
        nmse_std=("nmse", lambda s: float(np.std(s, ddof=0))),
        inner_mean=("inner_iterations", "mean"),
        time_mean=("elapsed", "mean"),
    )
    return [
        SummaryRow(
            cell=cell,
            t=int(t),
            runs=int(row.runs),
            nmse_mean=float(row.nmse_mean),
            nmse_std=float(row.nmse_std),
            nmse_db_mean=to_db(float(row.nmse_mean)),
            inner_mean=float(row.inner_mean),
            time_mean=float(row.time_mean),
        )
        for (cell, t), row in grouped.iterrows()
    ]


# ===========================================
# Sweeps
# ===========================================

def cell_name(
    delta: float,
    kappa: float,
    variant: str,
    policy: Union[str, int],
    threshold: Optional[float] = None,
) -> str:
    """Grid cell label; adaptive cells carry their Delta threshold."""
    if policy == "acg":
        label = acg_label(threshold if threshold is not None else AcgConfig().delta_threshold)
    else:
        label = f"i{policy}"
    return f"d{delta:g}_k{kappa:g}_{variant}_{label}"


def _policies(spec: SweepSpec) -> List[Tuple[Union[str, int], Optional[AcgConfig]]]:
    """Fixed counts as given; the acg policy once per Delta threshold."""
    policies: List[Tuple[Union[str, int], Optional[AcgConfig]]] = []
    for policy in spec.policies:
        if policy == "acg":
            for threshold in spec.thresholds:
                policies.append((policy, spec.acg.model_copy(update={"delta_threshold": threshold})))
        else:
            policies.append((policy, None))
    return policies


def expand_grid(spec: SweepSpec) -> List[Tuple[str, RunConfig]]:
    """Every (cell, seed) of the sweep as a validated RunConfig, in a fixed order."""
    cells = []
    for delta in spec.deltas:
        m = max(1, int(round(delta * spec.n)))
        for kappa in spec.kappas:
            for variant in spec.variants:
                for policy, acg in _policies(spec):
                    name = cell_name(
                        delta, kappa, variant.value, policy,
                        acg.delta_threshold if acg is not None else None,
                    )
                    for seed in spec.seeds:
                        config = RunConfig(
                            variant=variant,
                            acg=acg,
                            fixed_iterations=None if policy == "acg" else policy,
                            operator=OperatorSpec(
                                kind=spec.operator_kind,
                                n=spec.n,
                                m=m,
                                kappa=kappa,
                                seed=spec.operator_seed_offset + seed,
                            ),
                            denoiser=spec.denoiser,
                            snr_db=spec.snr_db,
                            sparsity=spec.sparsity,
                            t_max=spec.t_max,
                            seed=seed,
                            v_ba_estimator=spec.v_ba_estimator,
                            oracle=spec.oracle,
                        )
                        cells.append((name, config))
    return cells


def run_cell(cell: str, config: RunConfig, out_dir: str) -> Tuple[CellRecord, List[TraceRecord]]:
    """Run one (cell, seed) and write its traces; failures are returned, not raised."""
    run_dir = Path(out_dir) / cell / f"seed{config.seed}"
    record = CellRecord(cell=cell, config_hash=config.config_hash(), seed=config.seed)
    try:
        operator = build_operator(config.operator)
        instance = make_instance(
            operator, config.sparsity, config.snr_db, config.seed, v_w_override=config.v_w_override
        )
        result = run(config, instance)
    except (CgVampError, ValueError) as e:
        logger.error(f"Cell {cell} seed={config.seed} failed: {e}", exc_info=True)
        record.error = f"{type(e).__name__}: {e}"
        return record, []

    record.seeds = dict(instance.seeds)
    trace_path, inner_path = write_run(result, run_dir)
    record.trace_path = str(trace_path)
    record.inner_path = str(inner_path)
    record.trace_digest = trace_digest(result.rows)
    record.error = result.error
    return record, result.rows


def _manifest_hash(spec_hash: str, cells: Sequence[CellRecord]) -> str:
    payload = {
        "spec_hash": spec_hash,
        "cells": [
            {
                "cell": c.cell,
                "config_hash": c.config_hash,
                "seed": c.seed,
                "seeds": c.seeds,
                "trace_digest": c.trace_digest,
                "error": c.error,
            }
            for c in cells
        ],
    }
    encoded = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()[:16]


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepManifest:
    """
    Run every grid cell and seed, then write summary.csv and manifest.json.

    With workers > 1 the runs go to a process pool; results are collected in
    grid order so the manifest does not depend on scheduling.
    """
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = expand_grid(spec)
    logger.info(f"Sweep {spec.spec_hash()}: {len(grid)} runs, {workers} worker(s)")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, cell, config, str(out_dir)) for cell, config in grid]
            outcomes = [future.result() for future in futures]
    else:
        outcomes = [run_cell(cell, config, str(out_dir)) for cell, config in grid]

    manifest = write_outputs(outcomes, out_dir, spec.spec_hash())
    logger.info(
        f"Sweep finished: {len(manifest.cells)} runs, {manifest.failures} failure(s), "
        f"manifest {manifest.manifest_hash}"
    )
    return manifest


def write_outputs(
    outcomes: Sequence[Tuple[CellRecord, List[TraceRecord]]], out_dir: Path, spec_hash: str
) -> SweepManifest:
    """summary.csv and manifest.json for a list of finished runs."""
    frames: Dict[str, List[pd.DataFrame]] = {}
    for record, rows in outcomes:
        if rows:
            frames.setdefault(record.cell, []).append(records_frame(rows))
    summary = summarize({cell: pd.concat(parts, ignore_index=True) for cell, parts in frames.items()})
    summary_path = write_csv(records_frame(summary), out_dir / "summary.csv", SUMMARY_SCHEMA)

    cells = [record for record, _ in outcomes]
    failures = sum(1 for record in cells if record.error)
    manifest = SweepManifest(
        spec_hash=spec_hash,
        manifest_hash=_manifest_hash(spec_hash, cells),
        cells=cells,
        summary_path=str(summary_path),
        failures=failures,
    )
    (out_dir / "manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return manifest
