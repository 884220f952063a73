"""Seeded replications and experiment aggregation.

Within a replication the node layer (truth, sensing, local tracking) does
not depend on the scheduling policy, so it is computed once per sensing
setup and every policy's FC loop replays the same node outputs.  This is the
common-random-numbers design: all policies see the same scene, the same
target motion and the same measurements.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Iterable, Sequence

import numpy as np

from .config import ScenarioConfig
from .dynamics import TruthHistory, simulate_truth
from .fusion import CapacityLedger, FusionCenter
from .geometry import Region, pairwise_distance, sample_point_pattern
from .markov import entropy_rate
from .metrics import CDF_THRESHOLDS_M, RunRecorder, entropy_update_scatter, hist_cdf, hist_quantile
from .node import NodeStep, run_node_layer
from .policies import StepView, make_policy, policy_stream_id

log = logging.getLogger(__name__)

SCENE, MOTION, SENSING, POLICY = 0, 1, 2, 3
MIN_TRACKED_STEPS = 50


def stream(seed: int, rep: int, purpose: int, sub: int = 0) -> np.random.Generator:
    """Independent generator for one (replication, purpose) pair."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep, purpose, sub)))


def replication_seeds(seed: int, reps: int) -> list[int]:
    """Per-replication seeds reported in the summary (derived, informational)."""
    return [int(np.random.SeedSequence(entropy=seed, spawn_key=(r,)).generate_state(1, dtype=np.uint64)[0]) for r in range(reps)]


@dataclass(frozen=True)
class RunSpec:
    """One FC run within a replication: a policy at a capacity under a sensing setup."""

    policy: str
    capacity: float
    p_detection: float | None = None
    p_false_alarm: float | None = None

    def sensing(self, cfg: ScenarioConfig) -> tuple[float, float]:
        pd = cfg.p_detection if self.p_detection is None else self.p_detection
        pfa = cfg.p_false_alarm if self.p_false_alarm is None else self.p_false_alarm
        return float(pd), float(pfa)

    def label(self, cfg: ScenarioConfig) -> str:
        pd, pfa = self.sensing(cfg)
        base = f"{self.policy}@C={self.capacity:g}"
        if (pd, pfa) != (cfg.p_detection, cfg.p_false_alarm):
            base += f"@pd={pd:g},pfa={pfa:g}"
        return base


@dataclass
class RunResult:
    spec: RunSpec
    rows: np.ndarray  # (steps, 7)
    hist: np.ndarray
    target_entropy: np.ndarray
    target_updates: np.ndarray
    target_tracked: np.ndarray
    peak_sum: float
    peak_count: int
    age_sum: float
    age_n: int
    node_rates: np.ndarray

    @property
    def paoi(self) -> float:
        return self.peak_sum / self.peak_count if self.peak_count else float("nan")

    @property
    def mean_age(self) -> float:
        return self.age_sum / self.age_n if self.age_n else float("nan")


@dataclass
class Scene:
    region: Region
    nodes: np.ndarray
    truth: TruthHistory
    covered: np.ndarray  # (T+1, M)


def build_scene(cfg: ScenarioConfig, rep: int) -> Scene:
    region = Region(cfg.region_width_km, cfg.region_height_km)
    scene_rng = stream(cfg.seed, rep, SCENE)
    nodes = sample_point_pattern(region, cfg.node_density, scene_rng).points
    truth = simulate_truth(cfg, region, scene_rng, stream(cfg.seed, rep, MOTION))
    covered = np.zeros(truth.alive.shape, dtype=bool)
    if len(nodes) and truth.n_targets:
        r = cfg.disk_radius_km
        for t in range(truth.steps + 1):
            d = pairwise_distance(truth.position[t], nodes, region, cfg.wrap)
            covered[t] = (d <= r).any(axis=1)
    return Scene(region, nodes, truth, covered)


def node_layer(cfg: ScenarioConfig, scene: Scene, rep: int, pd: float, pfa: float) -> list[NodeStep]:
    sensing_cfg = cfg.with_overrides(p_detection=pd, p_false_alarm=pfa)
    return run_node_layer(scene.nodes, scene.truth, sensing_cfg, scene.region, stream(cfg.seed, rep, SENSING))


def run_fc(cfg: ScenarioConfig, scene: Scene, steps: list[NodeStep], spec: RunSpec, rep: int) -> RunResult:
    """Replay one policy's FC loop over cached node outputs."""
    n_nodes = len(scene.nodes)
    truth = scene.truth
    rng = stream(cfg.seed, rep, POLICY, policy_stream_id(spec.policy))
    policy = make_policy(spec.policy, n_nodes, spec.capacity, rng, cfg)
    fc = FusionCenter(
        scene.nodes, scene.region, cfg.disk_radius_km, cfg.max_age, cfg.process_noise_mps2 / 1000.0, cfg.wrap, dt=cfg.dt
    )
    ledger = CapacityLedger(n_nodes, spec.capacity, cfg.alpha)
    rec = RunRecorder(truth.n_targets, len(steps), cfg.match_radius_m / 1000.0, scene.region, cfg.wrap)
    sigma_ref = cfg.sigma0_km**2
    for ns in steps:
        t = ns.t
        fc.advance(t)
        row_slot = fc.slots_for(ns.node, ns.lid)
        known = row_slot >= 0
        row_age = np.where(known, t - fc.v[np.where(known, row_slot, 0)], cfg.max_age)
        responsible = None
        if policy.distributed:
            pos = ns.state[:, :2].copy()
            if known.any():
                pos[known] = fc.positions(t, row_slot[known])
            responsible = fc.closest_covering(pos) == ns.node
        view = StepView(t, ns, row_slot, row_age, fc.live, n_nodes, cfg.max_age, sigma_ref, responsible)
        decision = policy.select(view)
        sel = decision.selected
        ledger.record_selection(sel, t)
        if len(sel) and len(ns.node):
            m = np.isin(ns.node, sel)
            fc.ingest(t, ns.node[m], ns.lid[m], ns.state[m], ns.cov[m], ns.gamma[m], ns.mu[m], ns.omega[m], ns.p_stay[m])
            upd = ns.truth[m]
            upd = upd[upd >= 0]
        else:
            upd = np.zeros(0, dtype=np.int64)
        fc.prune_stale(t)
        live = fc.live
        peak = fc.peak_sum / fc.peak_count if fc.peak_count else float("nan")
        rec.record(
            t,
            len(sel),
            fc.ages(t, live),
            fc.positions(t, live),
            peak,
            truth.position[t],
            truth.alive[t],
            scene.covered[t],
            upd,
        )
    entropy = np.array([entropy_rate(T) for T in truth.transition]) if truth.n_targets else np.zeros(0)
    return RunResult(
        spec=spec,
        rows=rec.rows,
        hist=rec.hist,
        target_entropy=entropy,
        target_updates=rec.updates,
        target_tracked=rec.tracked_steps,
        peak_sum=fc.peak_sum,
        peak_count=fc.peak_count,
        age_sum=rec.age_sum,
        age_n=rec.age_n,
        node_rates=ledger.rates(),
    )


def run_replication(cfg: ScenarioConfig, rep: int, specs: Sequence[RunSpec]) -> list[RunResult]:
    """All requested runs of one replication, sharing scene and node layers."""
    scene = build_scene(cfg, rep)
    layers: dict[tuple[float, float], list[NodeStep]] = {}
    out = []
    for spec in specs:
        key = spec.sensing(cfg)
        if key not in layers:
            layers[key] = node_layer(cfg, scene, rep, *key)
        out.append(run_fc(cfg, scene, layers[key], spec, rep))
    return out


def _rep_job(args):
    cfg, rep, specs = args
    return run_replication(cfg, rep, specs)


def iter_replications(cfg: ScenarioConfig, specs: Sequence[RunSpec], reps: int, workers: int = 1) -> Iterable[list[RunResult]]:
    """Replication results in replication order, whatever the worker count."""
    jobs = [(cfg, r, tuple(specs)) for r in range(reps)]
    if workers <= 1 or reps <= 1:
        for job in jobs:
            yield _rep_job(job)
        return
    with get_context("spawn").Pool(processes=workers) as pool:
        # imap keeps submission order, so the reduce below is deterministic
        yield from pool.imap(_rep_job, jobs)


# --- aggregation -------------------------------------------------------------
@dataclass
class Aggregate:
    """Cross-replication totals for one run spec."""

    spec: RunSpec
    steps: int
    reps: int = 0
    sel_by_t: np.ndarray | None = None
    sel_total: float = 0.0
    hist: np.ndarray | None = None
    peak_sum: float = 0.0
    peak_count: int = 0
    age_sum: float = 0.0
    age_n: int = 0
    missed_by_t: np.ndarray | None = None  # (steps, 2)
    rows: list = field(default_factory=list)
    scatter: list = field(default_factory=list)  # (rep, target, entropy, rate)
    node_rates: list = field(default_factory=list)  # (rep, node, rate)
    run_paoi: list = field(default_factory=list)
    run_mean_age: list = field(default_factory=list)
    run_stats: list = field(default_factory=list)  # per-rep summary values
    uncovered_sum: float = 0.0
    age_by_t: np.ndarray | None = None  # (steps, 2): sum of step means, count

    def add(self, rep: int, res: RunResult, keep_rows: bool = True) -> None:
        r = res.rows
        if self.sel_by_t is None:
            self.sel_by_t = np.zeros(len(r))
            self.missed_by_t = np.zeros((len(r), 2))
            self.hist = np.zeros_like(res.hist)
            self.age_by_t = np.zeros((len(r), 2))
        self.reps += 1
        self.sel_by_t += r[:, 0]
        self.sel_total += float(r[:, 0].sum())
        self.hist += res.hist
        self.peak_sum += res.peak_sum
        self.peak_count += res.peak_count
        self.age_sum += res.age_sum
        self.age_n += res.age_n
        self.missed_by_t += r[:, 5:7]
        self.uncovered_sum += float(r[:, 6].sum())
        if keep_rows:
            self.rows.append((rep, r))
        ok = res.target_tracked >= MIN_TRACKED_STEPS
        for m in np.flatnonzero(ok):
            self.scatter.append((rep, int(m), float(res.target_entropy[m]), res.target_updates[m] / res.target_tracked[m]))
        for n, rate in enumerate(res.node_rates):
            self.node_rates.append((rep, n, float(rate)))
        self.run_paoi.append(res.paoi)
        self.run_mean_age.append(res.mean_age)
        ok_age = np.isfinite(r[:, 1])
        self.age_by_t[ok_age, 0] += r[ok_age, 1]
        self.age_by_t[ok_age, 1] += 1
        self.run_stats.append(
            {
                "mean_capacity": float(r[:, 0].mean()),
                "p_err_le_100m": float(hist_cdf(res.hist, [100.0])[0]),
                "median_error_m": hist_quantile(res.hist, 0.5),
                "paoi": res.paoi,
                "mean_age": res.mean_age,
                "missed_mean": float(r[:, 5].mean()),
            }
        )

    # summary quantities
    @property
    def mean_capacity(self) -> float:
        return self.sel_total / (self.reps * self.steps)

    @property
    def median_error_m(self) -> float:
        return hist_quantile(self.hist, 0.5)

    @property
    def p_err_le_100m(self) -> float:
        return float(hist_cdf(self.hist, [100.0])[0])

    @property
    def paoi(self) -> float:
        return self.peak_sum / self.peak_count if self.peak_count else float("nan")

    @property
    def mean_age(self) -> float:
        return self.age_sum / self.age_n if self.age_n else float("nan")

    @property
    def missed_mean(self) -> float:
        """Mean count of covered targets without a matched FC track."""
        return float(self.missed_by_t[:, 0].sum() / (self.reps * self.steps))

    @property
    def uncovered_mean(self) -> float:
        return self.uncovered_sum / (self.reps * self.steps)

    @property
    def mean_age_by_t(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.age_by_t[:, 0] / self.age_by_t[:, 1]

    def standard_errors(self, boot_seed: int = 0) -> dict:
        """Monte Carlo standard error of each summary value across replications.

        The slope's error is the bootstrap standard deviation over targets.
        """
        out = {}
        for key in ("mean_capacity", "p_err_le_100m", "median_error_m", "paoi", "mean_age", "missed_mean"):
            v = np.array([s[key] for s in self.run_stats], dtype=float)
            v = v[np.isfinite(v)]
            out[key] = _num(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else None
        out["scatter_slope"] = None
        if len(self.scatter) > 2:
            arr = np.array([(s[2], s[3]) for s in self.scatter])
            rng = np.random.default_rng(boot_seed)
            idx = rng.integers(0, len(arr), size=(500, len(arr)))
            x, y = arr[idx, 0], arr[idx, 1]
            xm, ym = x.mean(axis=1, keepdims=True), y.mean(axis=1, keepdims=True)
            den = np.sum((x - xm) ** 2, axis=1)
            ok = den > 0
            if ok.sum() > 1:
                slopes = np.sum((x - xm) * (y - ym), axis=1)[ok] / den[ok]
                out["scatter_slope"] = _num(slopes.std(ddof=1))
        return out

    def scatter_fit(self, boot_seed: int | None = None):
        if not self.scatter:
            return entropy_update_scatter([], [])
        arr = np.array([(s[2], s[3]) for s in self.scatter])
        rng = np.random.default_rng(boot_seed) if boot_seed is not None else None
        return entropy_update_scatter(arr[:, 0], arr[:, 1], rng)

    def summary(self) -> dict:
        fit = self.scatter_fit()
        return {
            "mean_capacity": _num(self.mean_capacity),
            "p_err_le_100m": _num(self.p_err_le_100m),
            "median_error_m": _num(self.median_error_m),
            "paoi": _num(self.paoi),
            "mean_age": _num(self.mean_age),
            "scatter_slope": _num(fit.slope),
            "missed_mean": _num(self.missed_mean),
        }


def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if not math.isfinite(x) else round(x, 9)


@dataclass
class Experiment:
    cfg: ScenarioConfig
    specs: list[RunSpec]
    aggregates: dict[RunSpec, Aggregate]
    seeds: list[int]


def run_experiment(
    cfg: ScenarioConfig,
    specs: Sequence[RunSpec] | None = None,
    reps: int | None = None,
    workers: int | None = None,
    keep_rows: bool = True,
    progress=None,
) -> Experiment:
    """Run every spec over the same replications and reduce in order."""
    reps = cfg.replications if reps is None else reps
    workers = cfg.workers if workers is None else workers
    if specs is None:
        specs = [RunSpec(p, cfg.capacity) for p in cfg.policies]
    specs = list(dict.fromkeys(specs))
    aggs = {s: Aggregate(s, cfg.steps) for s in specs}
    for rep, results in enumerate(iter_replications(cfg, specs, reps, workers)):
        for res in results:
            aggs[res.spec].add(rep, res, keep_rows)
        if progress is not None:
            progress(rep + 1, reps)
    return Experiment(cfg, specs, aggs, replication_seeds(cfg.seed, reps))
