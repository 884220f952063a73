"""Update-scheduling policies.

Four are run by the FC each step (centralized AoI, UCB, random, round
robin) and pick a fixed number of nodes.  The distributed AoII policy lets
every node decide for itself from its own penalty process.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .aoii import ThresholdPolicy, aoii_budget, aoii_threshold
from .node import NodeStep

CENTRALIZED = "centralized-aoi"
DISTRIBUTED = "distributed-aoii"
UCB = "ucb"
RANDOM = "random"
ROUND_ROBIN = "round-robin"


def policy_stream_id(name: str) -> int:
    """Stable per-policy RNG stream index (independent of policy order)."""
    return zlib.crc32(name.encode())


def capacity_for_step(capacity: float, rng: np.random.Generator) -> int:
    """``floor(C)`` or ``ceil(C)`` nodes, the latter with probability ``frac(C)``."""
    base = math.floor(capacity)
    frac = capacity - base
    if frac > 0.0 and rng.uniform() < frac:
        return base + 1
    return base


@dataclass
class PolicyDecision:
    t: int
    selected: np.ndarray
    scores: dict = field(default_factory=dict)


@dataclass
class StepView:
    """What a policy may look at in one step.

    ``row_slot`` maps each confirmed node track to its FC slot (-1 when the FC
    has never received it).  ``ages`` are FC ages at the start of the step.
    """

    t: int
    step: NodeStep
    row_slot: np.ndarray
    row_age: np.ndarray
    live_slots: np.ndarray
    n_nodes: int
    max_age: int
    sigma_ref: float
    responsible: np.ndarray | None = None


# --- edge matrix ---------------------------------------------------------
def edge_matrix(view: StepView, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Score matrix ``F`` (nodes x FC targets) and the mask of reported entries.

    Columns are the FC's live tracks followed by confirmed node tracks the FC
    has not received yet (treated as maximally old).  A node's entry for a
    column it reports is ``age / sigma``; every other entry is ``gamma``.
    Variances are expressed relative to ``sigma_ref`` so the two terms share
    a scale.
    """
    live = view.live_slots
    col_of = {int(s): i for i, s in enumerate(live)}
    rows = view.step
    unrep = np.flatnonzero(view.row_slot < 0)
    n_cols = len(live) + len(unrep)
    F = np.full((view.n_nodes, n_cols), float(gamma))
    own = np.zeros((view.n_nodes, n_cols), dtype=bool)
    if len(rows.node):
        cols = np.empty(len(rows.node), dtype=np.int64)
        known = view.row_slot >= 0
        cols[known] = [col_of[int(s)] for s in view.row_slot[known]]
        cols[unrep] = len(live) + np.arange(len(unrep))
        age = np.where(known, view.row_age, view.max_age).astype(float)
        F[rows.node, cols] = age / (rows.sigma / view.sigma_ref)
        own[rows.node, cols] = True
    return F, own


def select_centralized_aoi(
    F: np.ndarray, own: np.ndarray, interest: np.ndarray, count: int, alpha_avail: float
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Greedy node selection with column zeroing.

    Returns the selected ids and the score vector seen at each pick.  The
    edge matrix is ``alpha~_n F``; after each pick the columns of the targets
    that node reports are set to zero for every node.
    """
    n = F.shape[0]
    count = min(count, n)
    weight = np.where(np.asarray(interest, dtype=bool), 1.0, alpha_avail)
    E = F * weight[:, None]
    chosen: list[int] = []
    history = []
    taken = np.zeros(n, dtype=bool)
    for _ in range(count):
        Q = E.sum(axis=1)
        history.append(Q.copy())
        Q[taken] = -np.inf
        best = int(np.argmax(Q))  # first maximum: lowest id wins ties
        chosen.append(best)
        taken[best] = True
        E[:, own[best]] = 0.0
    return np.array(sorted(chosen), dtype=np.int64), history


def poll_interest(step: NodeStep) -> np.ndarray:
    """Node ids that raised an interest flag this CPI."""
    return np.flatnonzero(step.interest)


# --- fixed policies --------------------------------------------------------
class Policy:
    name = ""
    distributed = False

    def __init__(self, n_nodes: int, capacity: float, rng: np.random.Generator, cfg=None):
        self.n_nodes = n_nodes
        self.capacity = capacity
        self.rng = rng
        self.cfg = cfg

    def select(self, view: StepView) -> PolicyDecision:
        raise NotImplementedError


class CentralizedAoI(Policy):
    name = CENTRALIZED

    def select(self, view: StepView) -> PolicyDecision:
        count = capacity_for_step(self.capacity, self.rng)
        F, own = edge_matrix(view, self.cfg.gamma_discount)
        sel, hist = select_centralized_aoi(F, own, view.step.interest, count, self.cfg.alpha_avail)
        return PolicyDecision(view.t, sel, {"Q": hist})


def ucb_index(F_sum: np.ndarray, counts: np.ndarray, t: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return F_sum + np.sqrt(math.log(t) / counts)


class UcbPolicy(Policy):
    """Selection by the minimum of summed score plus an exploration term."""

    name = UCB

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.counts = np.zeros(self.n_nodes, dtype=np.int64)

    def select(self, view: StepView) -> PolicyDecision:
        count = min(capacity_for_step(self.capacity, self.rng), self.n_nodes)
        fresh = np.flatnonzero(self.counts == 0)
        chosen = list(fresh[:count])
        idx = None
        if len(chosen) < count:
            F, _ = edge_matrix(view, self.cfg.gamma_discount)
            idx = ucb_index(F.sum(axis=1), self.counts, max(view.t, 1))
            idx_masked = idx.copy()
            idx_masked[chosen] = np.inf
            order = np.argsort(idx_masked, kind="stable")
            chosen += list(order[: count - len(chosen)])
        sel = np.array(sorted(int(c) for c in chosen), dtype=np.int64)
        self.counts[sel] += 1
        return PolicyDecision(view.t, sel, {"index": idx})


class RandomPolicy(Policy):
    name = RANDOM

    def select(self, view: StepView) -> PolicyDecision:
        count = min(capacity_for_step(self.capacity, self.rng), self.n_nodes)
        sel = np.sort(self.rng.choice(self.n_nodes, size=count, replace=False)) if count else np.zeros(0, np.int64)
        return PolicyDecision(view.t, sel.astype(np.int64))


class RoundRobinPolicy(Policy):
    """Oldest-first: the nodes whose last selection lies furthest back.

    A FIFO queue, initially in id order; selected nodes move to the back in
    queue order.  Never-selected nodes are the oldest and go by id.  Among
    nodes last picked in the same step, the one that waited longer before
    that pick goes first, which keeps every node's rate at exactly C / N.
    """

    name = ROUND_ROBIN

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.queue = np.arange(self.n_nodes, dtype=np.int64)

    def select(self, view: StepView) -> PolicyDecision:
        count = min(capacity_for_step(self.capacity, self.rng), self.n_nodes)
        head = self.queue[:count]
        self.queue = np.concatenate([self.queue[count:], head])
        return PolicyDecision(view.t, np.sort(head))


# --- distributed AoII --------------------------------------------------------
@dataclass
class AoiiProcess:
    """Penalty process and threshold state of one node."""

    v: int = 0
    stored: dict = field(default_factory=dict)
    penalty: int = 0
    threshold: float = math.inf
    policy: ThresholdPolicy | None = None
    drivers: frozenset = frozenset()
    delta: float = 0.0
    sends: int = 0


def aoii_step(proc: AoiiProcess, t: int, lids, gammas, detected) -> bool:
    """Advance the penalty and report whether the active threshold is met.

    The penalty is ``t - v`` while any driving track's estimated state differs
    from the stored one.  It freezes on a step in which no driving track was
    detected; a missed track simply keeps its last estimate.
    """
    if any(detected):
        differs = any(proc.stored.get(l, -1) != g for l, g in zip(lids, gammas))
        proc.penalty = (t - proc.v) if differs else 0
    return proc.penalty > 0 and proc.penalty >= proc.threshold


class DistributedAoii(Policy):
    """Every node runs its own randomised threshold policy.

    The FC spreads the capacity as a per-node rate over the nodes that
    currently hold confirmed tracks and broadcasts it on the feedback block.
    Nodes whose targets rarely change cannot spend their share, so the FC
    integrates the fleet-wide shortfall and raises the broadcast rate, never
    beyond ``headroom`` above the nominal ``C / (lambda_n |B|)``.  Each node
    splits the rate evenly over the targets driving its timing and sets the
    joint threshold for the node total.  A token bucket holds the realised
    rate to the broadcast budget, and its fill level feeds back into the
    threshold budget so a node that falls behind lowers its threshold.

    Targets the FC has never received count as driving targets whose stored
    state is unknown, so a new track gets reported soon.
    """

    name = DISTRIBUTED
    distributed = True
    # the bucket bounds sends by credit_start + alpha_cap * T, which stays
    # under alpha + 0.02 over 1000 steps
    headroom = 0.185
    fleet_horizon = 100.0
    bucket = 4.0
    credit_start = 1.0
    credit_ref = 2.0
    credit_horizon = 20.0

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.procs = [AoiiProcess() for _ in range(self.n_nodes)]
        area = self.cfg.region_area_km2 * self.cfg.node_density
        self.alpha_nominal = self.capacity / area if area > 0 else 0.0
        self.alpha_cap = self.alpha_nominal * (1.0 + self.headroom)
        # no starting credit without capacity, so C = 0 never sends
        self.credit = np.full(self.n_nodes, self.credit_start if self.alpha_cap > 0 else 0.0)
        self.debt = 0.0
        self.alpha_eff = 0.0

    def broadcast_rate(self, n_active: int) -> float:
        if n_active == 0:
            return 0.0
        base = self.capacity / n_active + self.debt / (n_active * self.fleet_horizon)
        return float(np.clip(base, 0.0, self.alpha_cap))

    def select(self, view: StepView) -> PolicyDecision:
        step = view.step
        t = view.t
        node = step.node
        order = np.argsort(node, kind="stable")
        bounds = np.searchsorted(node[order], np.arange(self.n_nodes + 1))
        active = np.flatnonzero(np.diff(bounds) > 0)
        alpha = self.broadcast_rate(len(active))
        self.alpha_eff = alpha
        resp = view.responsible if view.responsible is not None else np.ones(len(node), dtype=bool)
        drive_mask = resp | (view.row_slot < 0)
        chosen = []
        penalties = {}
        for n in active:
            self.credit[n] = min(self.credit[n] + alpha, self.bucket)
            rows = order[bounds[n] : bounds[n + 1]]
            drv = rows[drive_mask[rows]]
            if len(drv) == 0:
                drv = rows  # no assigned targets: time updates on all own tracks
            proc = self.procs[n]
            lids = step.lid[drv]
            key = frozenset(int(l) for l in lids)
            m_n = len(drv)
            target = alpha + (self.credit[n] - self.credit_ref) / self.credit_horizon
            delta_node = aoii_budget(float(np.clip(target, 1e-3, 1.0)), m_n) * m_n
            # a new budget takes effect at the next cycle or driver change
            stale = proc.policy is None or key != proc.drivers
            if stale:
                state = np.array([proc.stored.get(int(l), int(g)) for l, g in zip(lids, step.gamma[drv])])
                proc.policy = aoii_threshold(step.p_stay[drv], state, delta_node)
                proc.threshold = proc.policy.draw(self.rng)
                proc.drivers = key
                proc.delta = delta_node
            send = aoii_step(proc, t, lids.tolist(), step.gamma[drv].tolist(), step.detected[drv].tolist())
            penalties[int(n)] = proc.penalty
            if send and self.credit[n] >= 1.0:
                chosen.append(int(n))
                self.credit[n] -= 1.0
                proc.v = t
                proc.penalty = 0
                proc.sends += 1
                proc.stored = {int(l): int(g) for l, g in zip(step.lid[rows], step.gamma[rows])}
                proc.policy = None  # new cycle: fresh threshold draw
        # integral action on the fleet shortfall, bounded to avoid wind-up
        lim = self.capacity * self.fleet_horizon
        self.debt = float(np.clip(self.debt + self.capacity - len(chosen), -lim, lim))
        return PolicyDecision(t, np.array(chosen, dtype=np.int64), {"penalty": penalties, "rate": alpha})


POLICY_CLASSES = {
    CENTRALIZED: CentralizedAoI,
    DISTRIBUTED: DistributedAoii,
    UCB: UcbPolicy,
    RANDOM: RandomPolicy,
    ROUND_ROBIN: RoundRobinPolicy,
}


def make_policy(name: str, n_nodes: int, capacity: float, rng: np.random.Generator, cfg) -> Policy:
    try:
        cls = POLICY_CLASSES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICY_CLASSES)}") from None
    return cls(n_nodes, capacity, rng, cfg)
