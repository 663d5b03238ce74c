"""
CG-VAMP experiment runner.

Runs single configurations, seeded sweeps, plots, sweep evaluation and the
oracle audit.

Usage:
    python -m scripts.cgvamp run --config configs/run.json --out data/runs/demo --seeds 0,1,2
    python -m scripts.cgvamp sweep --config configs/sweep_acg.json --out data/runs/acg
    python -m scripts.cgvamp plot --out data/runs/acg --kind nmse_vs_t
    python -m scripts.cgvamp plot --out data/plots --summary data/runs/a/summary.csv data/runs/b/summary.csv --kind nmse_vs_time
    python -m scripts.cgvamp evaluate --criterion stopping --out data/runs/stopping
    python -m scripts.cgvamp audit --n 16384 --seeds 0,1
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import pandas as pd
from pydantic import ValidationError

from app.config import get_settings
from app.services.evaluation import CRITERIA, evaluate, load_summaries
from app.services.harness import (
    SUMMARY_SCHEMA,
    load_run_config,
    load_sweep_spec,
    read_csv,
    run_cell,
    run_sweep,
    write_outputs,
)
from app.services.plotting import PLOT_KINDS, plot_traces
from app.services.solver_service import get_solver_service
from app.utils.errors import CgVampError

logger = logging.getLogger(__name__)


def parse_seeds(value: Optional[str]) -> Optional[List[int]]:
    """'0,1,2' -> [0, 1, 2]; an empty list is rejected."""
    if value is None:
        return None
    try:
        seeds = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {value!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("seeds list is empty")
    return seeds


def cmd_run(args: argparse.Namespace) -> int:
    service = get_solver_service()
    config = load_run_config(args.config) if args.config else service.default_config()
    if args.oracle is not None:
        config = config.model_copy(update={"oracle": args.oracle == "on"})
    seeds = args.seeds or [config.seed]
    out_dir = Path(args.out or service.settings.output_dir)

    outcomes = []
    for seed in seeds:
        seeded = config.model_copy(update={"seed": seed})
        outcomes.append(run_cell(f"{seeded.variant.value}_{seeded.policy_label}", seeded, str(out_dir)))
    manifest = write_outputs(outcomes, out_dir, config.config_hash())

    for record, rows in outcomes:
        final = f"{rows[-1].nmse_db:.2f} dB" if rows else "n/a"
        logger.info(f"seed={record.seed} outer={len(rows)} final NMSE={final}")
    logger.info(f"Manifest written to {out_dir / 'manifest.json'}")
    return 1 if manifest.failures else 0


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = get_settings()
    spec = load_sweep_spec(args.config)
    updates = {}
    if args.out:
        updates["output_dir"] = args.out
    if args.seeds:
        updates["seeds"] = args.seeds
    if args.oracle is not None:
        updates["oracle"] = args.oracle == "on"
    if updates:
        spec = spec.model_validate({**spec.model_dump(), **updates})

    manifest = run_sweep(spec, workers=args.workers or settings.sweep_workers)
    logger.info(f"Manifest hash: {manifest.manifest_hash}")
    return 1 if manifest.failures else 0


def cmd_plot(args: argparse.Namespace) -> int:
    out_dir = Path(args.out or get_settings().output_dir)
    if args.summary:
        summary = pd.concat([read_csv(p, SUMMARY_SCHEMA) for p in args.summary], ignore_index=True)
    else:
        summary = load_summaries([out_dir])
    kinds = sorted(PLOT_KINDS) if args.kind == "all" else [args.kind]
    for kind in kinds:
        path = plot_traces(summary, kind, out_dir / f"{kind}.svg")
        logger.info(f"Wrote {path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    out_dirs = args.out or [get_settings().output_dir]
    report = evaluate(args.criterion, out_dirs)
    print(report.model_dump_json(indent=2))
    return 0 if report.passed else 1


def cmd_audit(args: argparse.Namespace) -> int:
    service = get_solver_service()
    report = service.audit(n=args.n, seeds=args.seeds)
    print(report.model_dump_json(indent=2))
    if args.out:
        path = Path(args.out) / "audit.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="CG-VAMP solver experiments")
    parser.add_argument("--log-level", default=None, help="Logging level (default from settings)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="Output directory")
        p.add_argument("--seeds", type=parse_seeds, help="Comma-separated seeds")
        p.add_argument("--oracle", choices=["on", "off"], help="Emit oracle_ columns")

    run_parser = sub.add_parser("run", help="Run a single configuration")
    common(run_parser)
    run_parser.set_defaults(func=cmd_run)

    sweep_parser = sub.add_parser("sweep", help="Run a seeded grid sweep")
    common(sweep_parser)
    sweep_parser.add_argument("--workers", type=int, help="Worker processes")
    sweep_parser.set_defaults(func=cmd_sweep)

    plot_parser = sub.add_parser("plot", help="Plot a sweep summary")
    plot_parser.add_argument("--out", help="Sweep output directory (plots are written here)")
    plot_parser.add_argument(
        "--summary", nargs="+", help="summary.csv paths, overlaid in one plot (default <out>/summary.csv)"
    )
    plot_parser.add_argument("--kind", default="nmse_vs_t", help=f"One of {sorted(PLOT_KINDS)} or 'all'")
    plot_parser.set_defaults(func=cmd_plot)

    evaluate_parser = sub.add_parser("evaluate", help="Check sweep outputs against an acceptance criterion")
    evaluate_parser.add_argument("--criterion", required=True, choices=CRITERIA)
    evaluate_parser.add_argument("--out", nargs="+", help="Sweep output directories")
    evaluate_parser.set_defaults(func=cmd_evaluate)

    audit_parser = sub.add_parser("audit", help="Run the oracle consistency suite")
    audit_parser.add_argument("--n", type=int, help="Signal dimension")
    audit_parser.add_argument("--seeds", type=parse_seeds, help="Comma-separated seeds")
    audit_parser.add_argument("--out", help="Write audit.json here")
    audit_parser.set_defaults(func=cmd_audit)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=(args.log_level or get_settings().log_level).upper(),
        format="%(asctime)s - %(levelname)s - %(message)s",
    )

    if args.command == "sweep" and not args.config:
        parser.error("sweep needs --config")

    try:
        return args.func(args)
    except (ValidationError, CgVampError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
