"""Result files: per-step records, summary JSON and plot-ready CSV tables.

Every number is written with a fixed format so that identical experiments
produce byte-identical files.  Missing values (NaN, undefined slopes) are
written as empty CSV fields and JSON ``null``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .harness import Aggregate, Experiment, RunSpec
from .metrics import ERROR_BIN_M

STEP_COLUMNS = (
    "rep",
    "policy",
    "t",
    "selected_count",
    "mean_age",
    "peak_age_running",
    "mean_error_m",
    "tracked_count",
    "covered_untracked",
    "uncovered",
)
CDF_STEP_M = 1.0
SCATTER_BOOT_SEED = 7


class OutputError(OSError):
    """Raised when result files cannot be written."""


def fmt(x) -> str:
    """Deterministic text for one CSV cell."""
    if x is None:
        return ""
    if isinstance(x, (str, np.str_)):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return ""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.10g}"


@dataclass
class Table:
    header: tuple[str, ...]
    rows: list

    def text(self) -> str:
        lines = [",".join(self.header)]
        lines.extend(",".join(fmt(v) for v in row) for row in self.rows)
        return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


# --- group layout ------------------------------------------------------------
def group_key(exp: Experiment, spec: RunSpec) -> tuple[float, float, float]:
    pd, pfa = spec.sensing(exp.cfg)
    return (float(spec.capacity), pd, pfa)


def group_name(exp: Experiment, key: tuple[float, float, float]) -> str:
    cap, pd, pfa = key
    name = f"C={cap:g}"
    if (pd, pfa) != (exp.cfg.p_detection, exp.cfg.p_false_alarm):
        name += f"_pd={pd:g}_pfa={pfa:g}"
    return name


def groups(exp: Experiment) -> dict[tuple[float, float, float], list[Aggregate]]:
    out: dict[tuple[float, float, float], list[Aggregate]] = {}
    for spec in exp.specs:
        out.setdefault(group_key(exp, spec), []).append(exp.aggregates[spec])
    return out


# --- tables ------------------------------------------------------------------
def steps_table(aggs: Sequence[Aggregate]) -> str:
    """``steps.csv`` body ordered by replication, then policy, then step."""
    by_rep: dict[int, list[tuple[str, np.ndarray]]] = {}
    for agg in aggs:
        for rep, rows in agg.rows:
            by_rep.setdefault(rep, []).append((agg.spec.policy, rows))
    lines = [",".join(STEP_COLUMNS)]
    for rep in sorted(by_rep):
        for policy, rows in by_rep[rep]:
            prefix = f"{rep},{policy},"
            for k, r in enumerate(rows):
                lines.append(prefix + str(k + 1) + "," + ",".join(fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def capacity_table(aggs: Sequence[Aggregate]) -> Table:
    rows = []
    for agg in aggs:
        mean = agg.sel_by_t / agg.reps
        rows.extend((agg.spec.policy, k + 1, v) for k, v in enumerate(mean))
    return Table(("policy", "t", "mean_selected"), rows)


def scatter_table(aggs: Sequence[Aggregate]) -> Table:
    rows = []
    for agg in aggs:
        rows.extend((agg.spec.policy, s[0], s[1], s[2], s[3]) for s in agg.scatter)
    return Table(("policy", "rep", "target", "entropy_bits", "update_rate"), rows)


def cdf_table(aggs: Sequence[Aggregate]) -> Table:
    rows = []
    for agg in aggs:
        total = agg.hist.sum()
        if total == 0:
            continue
        cum = np.cumsum(agg.hist) / total
        stride = int(round(CDF_STEP_M / ERROR_BIN_M))
        # cum[i] is P(error < (i + 1) * bin)
        for i in range(stride - 1, len(cum) - 1, stride):
            rows.append((agg.spec.policy, (i + 1) * ERROR_BIN_M, cum[i]))
    return Table(("policy", "error_m", "cdf"), rows)


def sweep_table(exp: Experiment) -> Table:
    rows = []
    for (cap, pd, pfa), aggs in sorted(groups(exp).items()):
        if (pd, pfa) != (exp.cfg.p_detection, exp.cfg.p_false_alarm):
            continue
        for agg in aggs:
            rows.append((agg.spec.policy, cap, agg.median_error_m, agg.mean_age))
    rows.sort(key=lambda r: (r[0], r[1]))
    return Table(("policy", "capacity", "median_error_m", "mean_age"), rows)


def paoi_table(aggs: Sequence[Aggregate]) -> Table:
    rows = []
    for agg in aggs:
        rows.extend((agg.spec.policy, rep, p, a) for rep, (p, a) in enumerate(zip(agg.run_paoi, agg.run_mean_age)))
    return Table(("policy", "rep", "paoi", "mean_age"), rows)


def meanage_table(aggs: Sequence[Aggregate]) -> Table:
    rows = []
    for agg in aggs:
        rows.extend((agg.spec.policy, k + 1, v) for k, v in enumerate(agg.mean_age_by_t))
    return Table(("policy", "t", "mean_age"), rows)


def missed_table(aggs: Sequence[Aggregate]) -> Table:
    rows = []
    for agg in aggs:
        m = agg.missed_by_t / agg.reps
        rows.extend((agg.spec.policy, k + 1, a, b) for k, (a, b) in enumerate(m))
    return Table(("policy", "t", "covered_untracked", "uncovered"), rows)


def node_rate_table(aggs: Sequence[Aggregate]) -> Table:
    rows = []
    for agg in aggs:
        rows.extend((agg.spec.policy, rep, n, r) for rep, n, r in agg.node_rates)
    return Table(("policy", "rep", "node", "rate"), rows)


def figure_tables(exp: Experiment, aggs: Sequence[Aggregate]) -> dict[str, Table]:
    return {
        "fig5_capacity.csv": capacity_table(aggs),
        "fig7_scatter.csv": scatter_table(aggs),
        "fig8_cdf.csv": cdf_table(aggs),
        "fig10_paoi.csv": paoi_table(aggs),
        "fig11_meanage.csv": meanage_table(aggs),
        "fig12_missed.csv": missed_table(aggs),
        "node_rates.csv": node_rate_table(aggs),
    }


# --- summary -----------------------------------------------------------------
def summary_dict(exp: Experiment, key: tuple[float, float, float], aggs: Sequence[Aggregate]) -> dict:
    cap, pd, pfa = key
    cfg = exp.cfg.with_overrides(capacity=cap, p_detection=pd, p_false_alarm=pfa, policies=tuple(a.spec.policy for a in aggs))
    out: dict = {}
    errors: dict = {}
    details: dict = {}
    for agg in aggs:
        name = agg.spec.policy
        out[name] = agg.summary()
        errors[name] = agg.standard_errors()
        fit = agg.scatter_fit(boot_seed=SCATTER_BOOT_SEED)
        node = np.array([r for _, _, r in agg.node_rates], dtype=float)
        details[name] = {
            "replications": agg.reps,
            "uncovered_mean": _round(agg.uncovered_mean),
            "scatter_intercept": _round(fit.intercept),
            "scatter_slope_ci95": None if fit.ci is None else [_round(v) for v in fit.ci],
            "scatter_points": len(agg.scatter),
            "node_rate_max": _round(node.max()) if len(node) else None,
            "node_rate_mean": _round(node.mean()) if len(node) else None,
            "selected_min": _round(min(float(rows[:, 0].min()) for _, rows in agg.rows)) if agg.rows else None,
            "selected_max": _round(max(float(rows[:, 0].max()) for _, rows in agg.rows)) if agg.rows else None,
        }
    out["standard_errors"] = errors
    out["details"] = details
    echo = cfg.to_nested()
    # worker count changes how, not what, is computed; leave it out so outputs match across it
    echo["run"].pop("workers", None)
    out["config"] = echo
    out["seeds"] = list(exp.seeds)
    return out


def _round(x):
    if x is None:
        return None
    x = float(x)
    return round(x, 9) if math.isfinite(x) else None


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


# --- entry point ---------------------------------------------------------------
def write_group(exp: Experiment, key, aggs: Sequence[Aggregate], out: Path, emit_plots: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "steps.csv", steps_table(aggs))
    summary = summary_dict(exp, key, aggs)
    _write(out / "summary.json", dumps(summary))
    tables = figure_tables(exp, aggs)
    for name, table in tables.items():
        _write(out / name, table.text())
    if emit_plots:
        from .plotting import render_group

        render_group(tables, out)
    return summary


def write_outputs(exp: Experiment, out_dir: str | Path, emit_plots: bool = False) -> dict[str, dict]:
    """Write every result file; returns the summary of each group by name.

    A single (capacity, sensing) group is written flat into ``out_dir``;
    several groups each get a subdirectory named after the group, and the
    capacity sweep table plus an index go to ``out_dir`` itself.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    grouped = groups(exp)
    summaries: dict[str, dict] = {}
    if len(grouped) == 1:
        (key, aggs), = grouped.items()
        summaries[group_name(exp, key)] = write_group(exp, key, aggs, out, emit_plots)
    else:
        for key, aggs in grouped.items():
            name = group_name(exp, key)
            summaries[name] = write_group(exp, key, aggs, out / name, emit_plots)
        index = {name: {p: s[p] for p in s if p not in ("config", "seeds", "standard_errors", "details")} for name, s in summaries.items()}
        _write(out / "sweep.json", dumps(index))
    sweep = sweep_table(exp)
    _write(out / "fig9_sweep.csv", sweep.text())
    if emit_plots:
        from .plotting import render_sweep

        render_sweep(sweep, out)
    return summaries
