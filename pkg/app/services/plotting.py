"""
Static SVG plots of sweep summaries, one series per grid cell.
"""

import logging
from pathlib import Path
from typing import Sequence, Union

import matplotlib
from matplotlib.figure import Figure
import pandas as pd

from app.models.schemas import SummaryRow
from app.utils.errors import InvalidParameterError

logger = logging.getLogger(__name__)

# kind -> (x column, x label, y column, y label)
PLOT_KINDS = {
    "nmse_vs_t": ("t", "Outer iteration t", "nmse_db_mean", "NMSE (dB)"),
    "inner_iters_vs_t": ("t", "Outer iteration t", "inner_mean", "Inner CG iterations"),
    "time_vs_t": ("t", "Outer iteration t", "time_mean", "Cumulative time (s)"),
    "nmse_vs_time": ("time_mean", "Cumulative time (s)", "nmse_db_mean", "NMSE (dB)"),
}

# Fixed element ids so identical inputs give identical files
matplotlib.rcParams["svg.hashsalt"] = "cgvamp"


def plot_traces(
    summary: Union[pd.DataFrame, Sequence[SummaryRow]],
    kind: str,
    path: Union[str, Path],
) -> Path:
    """Write one SVG of ``kind``; series are ordered by t within each cell."""
    if kind not in PLOT_KINDS:
        raise InvalidParameterError(f"Unknown plot kind {kind!r}; choose from {sorted(PLOT_KINDS)}")
    if not isinstance(summary, pd.DataFrame):
        summary = pd.DataFrame([row.model_dump() for row in summary])
    if summary.empty:
        raise InvalidParameterError("summary is empty; nothing to plot")

    x_column, x_label, y_column, y_label = PLOT_KINDS[kind]
    fig = Figure(figsize=(6.4, 4.2))
    ax = fig.add_subplot(1, 1, 1)
    for cell, group in summary.sort_values(["cell", "t"]).groupby("cell", sort=True):
        ax.plot(group[x_column], group[y_column], marker="o", markersize=3, label=str(cell))
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    logger.info(f"Wrote {kind} plot with {summary['cell'].nunique()} series to {path}")
    return path
