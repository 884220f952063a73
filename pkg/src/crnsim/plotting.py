"""SVG charts rendered from the plot-data tables."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .outputs import Table  # noqa: E402

plt.rcParams.update({"svg.hashsalt": "crnsim", "figure.figsize": (6.4, 4.0), "axes.grid": True, "grid.alpha": 0.3})
SVG_META = {"Date": None}


def _series(table: Table, x: str, y: str) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    ix, iy = table.header.index(x), table.header.index(y)
    acc: dict[str, list] = defaultdict(list)
    for row in table.rows:
        acc[row[0]].append((row[ix], row[iy]))
    out = {}
    for name, pts in acc.items():
        arr = np.array([(np.nan if a is None else a, np.nan if b is None else b) for a, b in pts], dtype=float)
        out[name] = (arr[:, 0], arr[:, 1])
    return out


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)


def line_chart(table: Table, x: str, y: str, path: Path, xlabel: str, ylabel: str, step: bool = False) -> None:
    fig, ax = plt.subplots()
    for name, (xs, ys) in sorted(_series(table, x, y).items()):
        if step:
            ax.step(xs, ys, where="post", label=name)
        else:
            ax.plot(xs, ys, label=name, lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    _save(fig, path)


def scatter_chart(table: Table, path: Path) -> None:
    fig, ax = plt.subplots()
    for name, (xs, ys) in sorted(_series(table, "entropy_bits", "update_rate").items()):
        pts = ax.scatter(xs, ys, s=4, alpha=0.3, label=name)
        if len(xs) > 1 and np.ptp(xs) > 0:
            slope, icpt = np.polyfit(xs, ys, 1)
            grid = np.linspace(xs.min(), xs.max(), 2)
            ax.plot(grid, icpt + slope * grid, color=pts.get_facecolor()[0][:3], lw=1.5)
    ax.set_xlabel("entropy rate (bits/step)")
    ax.set_ylabel("update rate (updates/step)")
    ax.legend(fontsize=8, markerscale=3)
    _save(fig, path)


def paoi_chart(table: Table, path: Path) -> None:
    fig, ax = plt.subplots()
    series = sorted(_series(table, "rep", "paoi").items())
    ax.boxplot([ys[np.isfinite(ys)] for _, (_, ys) in series])
    ax.set_xticks(range(1, len(series) + 1), [n for n, _ in series])
    ax.set_ylabel("peak age (steps)")
    ax.tick_params(axis="x", labelsize=7)
    _save(fig, path)


def render_group(tables: dict[str, Table], out: Path) -> None:
    line_chart(tables["fig5_capacity.csv"], "t", "mean_selected", out / "fig5_capacity.svg", "step", "mean selected nodes")
    scatter_chart(tables["fig7_scatter.csv"], out / "fig7_scatter.svg")
    line_chart(tables["fig8_cdf.csv"], "error_m", "cdf", out / "fig8_cdf.svg", "position error (m)", "CDF")
    paoi_chart(tables["fig10_paoi.csv"], out / "fig10_paoi.svg")
    line_chart(tables["fig11_meanage.csv"], "t", "mean_age", out / "fig11_meanage.svg", "step", "mean track age (steps)")
    line_chart(tables["fig12_missed.csv"], "t", "covered_untracked", out / "fig12_missed.svg", "step", "covered but untracked targets")


def render_sweep(table: Table, out: Path) -> None:
    if not table.rows:
        return
    fig, ax = plt.subplots()
    for name, (xs, ys) in sorted(_series(table, "capacity", "median_error_m").items()):
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel("capacity C (updates/step)")
    ax.set_ylabel("median position error (m)")
    ax.legend(fontsize=8)
    _save(fig, out / "fig9_sweep.svg")
