"""Tests for the sweep-level acceptance checks and the evaluate command."""

import numpy as np
import pandas as pd
import pytest

from app.models.schemas import CellRecord, SummaryRow, SweepSpec, TraceRecord
from app.services.evaluation import (
    check_acg_behavior,
    check_stopping_ablation,
    check_warm_start_benefit,
    evaluate,
    grid_prefix,
    stopping_lag,
    time_to_level,
    worst_rise,
)
from app.services.harness import SUMMARY_SCHEMA, records_frame, run_sweep, write_csv, write_outputs
from app.utils.errors import InvalidParameterError
from scripts.cgvamp import main

ACG_CELL = "d0.25_k100_cgvamp_acg-d0.015"


def _trace(nmse_db, inner):
    return [
        TraceRecord(
            t=t, variant="cgvamp", inner_iterations=i, nmse=float(10 ** (db / 10)), nmse_db=db,
            v_ba_tilde=0.1, v_ab_tilde=0.01, gamma_tilde=-1.0, gamma_b=0.2, v_ab_se=0.01,
            v_ba_se=0.002, rel_residual=1e-3, time_block_a=0.01, time_block_b=0.01, elapsed=0.1 * (t + 1),
        )
        for t, (db, i) in enumerate(zip(nmse_db, inner))
    ]


def _curve(cell, nmse_db, times=None):
    times = times if times is not None else np.arange(len(nmse_db), dtype=float)
    return [
        SummaryRow(cell=cell, t=t, runs=10, nmse_mean=float(10 ** (db / 10)), nmse_std=0.0,
                   nmse_db_mean=db, inner_mean=3.0, time_mean=float(s))
        for t, (db, s) in enumerate(zip(nmse_db, times))
    ]


def _frame(*curves):
    return pd.DataFrame([row.model_dump() for curve in curves for row in curve])


def _write_sweep(out_dir, traces, errors=()):
    outcomes = []
    for seed, rows in enumerate(traces):
        path = write_csv(records_frame(rows), out_dir / ACG_CELL / f"seed{seed}" / "trace.csv")
        outcomes.append((CellRecord(cell=ACG_CELL, config_hash="h", seed=seed, trace_path=str(path)), rows))
    for seed in errors:
        failed = CellRecord(cell=ACG_CELL, config_hash="h", seed=seed, error="OnsagerDegenerateError: x")
        outcomes.append((failed, []))
    return write_outputs(outcomes, out_dir, "sweep")


class TestHelpers:
    def test_grid_prefix(self):
        assert grid_prefix(ACG_CELL) == "d0.25_k100"
        assert grid_prefix("d0.05_k10000_ws_oracle_i1") == "d0.05_k10000"

    def test_worst_rise(self):
        assert worst_rise([-1.0, -2.0, -1.5, -3.0]) == pytest.approx(0.5)
        assert worst_rise([-1.0, -2.0]) < 0.0
        assert worst_rise([-1.0]) == 0.0

    def test_time_to_level(self):
        curve = _frame(_curve("a", [-5.0, -10.0, -15.0], [1.0, 2.0, 3.0]))
        assert time_to_level(curve, -10.0) == 2.0
        assert time_to_level(curve, -12.0) == 3.0
        assert time_to_level(curve, -20.0) is None


class TestAcgBehavior:
    def test_monotone_runs_with_varying_counts_pass(self, tmp_path):
        manifest = _write_sweep(tmp_path, [
            _trace([-5.0, -8.0, -10.0, -11.0], [3, 5, 8, 8]),
            _trace([-5.0, -7.0, -9.95, -9.9], [2, 4, 4, 9]),
        ])
        report = check_acg_behavior(manifest)
        assert report.passed
        (rise,) = [c for c in report.checks if c.name.startswith("acg_nmse_non_increasing")]
        assert rise.value == pytest.approx(0.05)

    def test_rise_beyond_tolerance_fails(self, tmp_path):
        manifest = _write_sweep(tmp_path, [_trace([-5.0, -8.0, -7.5], [3, 4, 5])])
        report = check_acg_behavior(manifest)
        assert not report.passed
        assert report.checks[1].name == f"acg_nmse_non_increasing[{ACG_CELL}]"

    def test_constant_inner_counts_fail(self, tmp_path):
        manifest = _write_sweep(tmp_path, [_trace([-5.0, -8.0, -9.0], [4, 4, 4])])
        (counts,) = [c for c in check_acg_behavior(manifest).checks if "counts" in c.name]
        assert not counts.passed

    def test_only_window_is_checked(self, tmp_path):
        db = [-5.0 - t for t in range(11)] + [0.0]
        manifest = _write_sweep(tmp_path, [_trace(db, list(range(1, 13)))])
        assert check_acg_behavior(manifest).passed

    def test_failed_runs_fail_the_criterion(self, tmp_path):
        manifest = _write_sweep(tmp_path, [_trace([-5.0, -8.0], [3, 4])], errors=[1])
        report = check_acg_behavior(manifest)
        assert report.checks[0].name == "acg_run_errors"
        assert report.checks[0].value == 1.0
        assert not report.passed


class TestStoppingAblation:
    WITH = "d0.25_k1000_cgvamp_acg-d0.015"
    WITHOUT = "d0.25_k1000_cgvamp_acg-dinf"

    def test_faster_curve_passes(self):
        fast = _frame(_curve(self.WITH, [-5.0, -10.0, -15.0, -20.0], [1.0, 2.0, 3.0, 4.0]))
        slow = _frame(_curve(self.WITHOUT, [-5.0, -8.0, -11.0, -14.0, -17.0, -20.0], np.arange(1.0, 7.0)))
        lag, levels = stopping_lag(fast, slow)
        assert lag == 0.0
        assert levels == 8

        report = check_stopping_ablation(pd.concat([fast, slow], ignore_index=True))
        (check,) = report.checks
        assert check.name == "stopping_lag_seconds[d0.25_k1000_cgvamp]"
        assert report.passed

    def test_slower_curve_fails(self):
        summary = _frame(
            _curve(self.WITH, [-5.0, -8.0, -11.0], [1.0, 3.0, 5.0]),
            _curve(self.WITHOUT, [-5.0, -8.0, -11.0], [1.0, 2.0, 3.0]),
        )
        report = check_stopping_ablation(summary)
        assert report.checks[0].value == pytest.approx(2.0)
        assert not report.passed

    def test_levels_outside_both_ranges_are_ignored(self):
        # The Delta-off run starts lower and goes deeper; only the shared range counts
        with_delta = _frame(_curve(self.WITH, [0.0, -5.0, -10.0], [0.5, 1.0, 2.0]))
        without = _frame(_curve(self.WITHOUT, [-4.0, -10.0, -30.0], [1.0, 2.0, 3.0]))
        lag, levels = stopping_lag(with_delta, without)
        assert levels == 3
        assert lag == pytest.approx(0.0)

    def test_missing_twin_fails(self):
        report = check_stopping_ablation(_frame(_curve(self.WITH, [-5.0, -8.0])))
        assert not report.passed
        assert np.isnan(report.checks[0].value)

    def test_empty_summary(self):
        assert not check_stopping_ablation(pd.DataFrame()).passed


class TestWarmStartBenefit:
    PREFIX = "d0.25_k100"

    def _summary(self, oracle_slope=-0.5, practical_slope=-0.3):
        t = np.arange(31)
        return _frame(
            _curve(f"{self.PREFIX}_ws_oracle_i1", list(oracle_slope * t)),
            _curve(f"{self.PREFIX}_cgvamp_i1", list(-0.4 * t)),
            _curve(f"{self.PREFIX}_ws_practical_i5", list(practical_slope * t)),
            _curve(f"{self.PREFIX}_cgvamp_i5", list(-0.2 * t)),
        )

    def test_clear_gains_pass(self):
        report = check_warm_start_benefit(self._summary())
        values = {check.name: check.value for check in report.checks}
        assert values[f"ws_oracle_gain_db[{self.PREFIX}]"] == pytest.approx(3.0)
        assert values[f"ws_practical_gain_db[{self.PREFIX}]"] == pytest.approx(2.0)
        assert report.passed

    def test_small_oracle_gain_fails(self):
        report = check_warm_start_benefit(self._summary(oracle_slope=-0.42))
        failed = [check.name for check in report.checks if not check.passed]
        assert failed == [f"ws_oracle_gain_db[{self.PREFIX}]"]

    def test_oracle_rise_fails(self):
        summary = self._summary()
        mask = (summary["cell"] == f"{self.PREFIX}_ws_oracle_i1") & (summary["t"] == 1)
        summary.loc[mask, "nmse_db_mean"] = 0.5
        report = check_warm_start_benefit(summary)
        assert not report.checks[0].passed
        assert report.checks[0].value == pytest.approx(0.5)

    def test_short_runs_fail(self):
        summary = self._summary()
        report = check_warm_start_benefit(summary[summary["t"] <= 20])
        failed = {check.name for check in report.checks if not check.passed}
        assert failed == {f"ws_oracle_non_increasing[{self.PREFIX}]", f"ws_oracle_gain_db[{self.PREFIX}]"}


class TestEvaluate:
    def test_unknown_criterion(self, tmp_path):
        with pytest.raises(InvalidParameterError):
            evaluate("speed", [tmp_path])

    def test_no_directories(self):
        with pytest.raises(InvalidParameterError):
            evaluate("acg", [])

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InvalidParameterError):
            evaluate("acg", [tmp_path])

    def test_summaries_of_several_sweeps_are_combined(self, tmp_path):
        t = np.arange(31)
        halves = {
            "oracle": _curve("d0.25_k100_ws_oracle_i1", list(-0.5 * t))
            + _curve("d0.25_k100_cgvamp_i1", list(-0.4 * t)),
            "practical": _curve("d0.25_k100_ws_practical_i5", list(-0.3 * t))
            + _curve("d0.25_k100_cgvamp_i5", list(-0.2 * t)),
        }
        dirs = []
        for name, rows in halves.items():
            write_csv(records_frame(rows), tmp_path / name / "summary.csv", SUMMARY_SCHEMA)
            dirs.append(tmp_path / name)
        assert evaluate("warm_start", dirs).passed
        assert main(["evaluate", "--criterion", "warm_start", "--out", *map(str, dirs)]) == 0
        assert main(["evaluate", "--criterion", "warm_start", "--out", str(dirs[0])]) == 1

    def test_real_sweep_with_threshold_grid(self, tmp_path):
        spec = SweepSpec(
            n=512, deltas=[0.5], kappas=[10], seeds=[0, 1], t_max=3, snr_db=30,
            acg_thresholds=[0.015, float("inf")], output_dir=str(tmp_path),
        )
        manifest = run_sweep(spec)
        assert manifest.failures == 0
        assert {record.cell for record in manifest.cells} == {
            "d0.5_k10_cgvamp_acg-d0.015",
            "d0.5_k10_cgvamp_acg-dinf",
        }
        (check,) = evaluate("stopping", [tmp_path]).checks
        assert check.name == "stopping_lag_seconds[d0.5_k10_cgvamp]"
        names = [check.name for check in evaluate("acg", [tmp_path]).checks]
        assert names[0] == "acg_run_errors"
        assert len(names) == 5
