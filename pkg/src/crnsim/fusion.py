"""Fusion-centre track store, ages, pruning and responsibility assignment.

FC tracks are keyed by their source ``(node id, local track id)``; reports of
the same physical target from two nodes stay separate tracks.  Every track
carries the same two-model (CV / coordinated-turn) IMM as the nodes and is
predicted forward each step, so between updates the FC follows the reported
motion state and turn rate while the model probabilities relax toward the
reported transition matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import imm
from .geometry import Region

log = logging.getLogger(__name__)


@dataclass
class CapacityLedger:
    """Per-step selected sets and per-node update counts."""

    n_nodes: int
    capacity: float
    alpha: float
    counts: np.ndarray = field(init=False)
    per_step: list = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        self.counts = np.zeros(self.n_nodes, dtype=np.int64)

    def record_selection(self, selected, t: int) -> None:
        sel = np.asarray(sorted(set(int(n) for n in selected)), dtype=np.int64)
        self.per_step.append(sel)
        if len(sel):
            self.counts[sel] += 1

    @property
    def steps(self) -> int:
        return len(self.per_step)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rates(self) -> np.ndarray:
        return self.counts / max(self.steps, 1)

    def mean_selected(self) -> float:
        return self.total / max(self.steps, 1)


class FusionCenter:
    """Fused tracks with ages ``t - v`` and max-age pruning.

    Call :meth:`advance` once per step before reading positions or ingesting
    reports for that step.
    """

    _FIELDS = ("src_node", "src_lid", "xm", "Pm", "mu", "omega", "Pi", "v", "gamma", "alive")

    def __init__(
        self,
        nodes: np.ndarray,
        region: Region,
        radius_km: float,
        max_age: int,
        accel_std_kms2: float,
        wrap: bool = True,
        ct_accel_scale: float = imm.CT_ACCEL_SCALE,
        dt: float = 1.0,
    ):
        self.nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        self.region = region
        self.size = region.size
        self.radius = radius_km
        self.max_age = max_age
        self.wrap = wrap
        self.dt = dt
        self.Q = np.stack([imm.white_accel_q(accel_std_kms2, dt), imm.white_accel_q(accel_std_kms2 * ct_accel_scale, dt)])
        self.index: dict[tuple[int, int], int] = {}
        cap = 256
        self.src_node = np.zeros(cap, dtype=np.int64)
        self.src_lid = np.zeros(cap, dtype=np.int64)
        self.xm = np.zeros((cap, 2, 4))
        self.Pm = np.zeros((cap, 2, 4, 4))
        self.mu = np.zeros((cap, 2))
        self.omega = np.zeros(cap)
        self.Pi = np.zeros((cap, 2, 2))
        self.v = np.zeros(cap, dtype=np.int64)
        self.gamma = np.zeros(cap, dtype=np.int8)
        self.alive = np.zeros(cap, dtype=bool)
        self.n = 0
        self.t = 0
        # peak-age bookkeeping: age values observed just before each reset
        self.peak_sum = 0.0
        self.peak_count = 0

    # storage -------------------------------------------------------------
    def _grow(self) -> None:
        cap = 2 * len(self.alive)
        for name in self._FIELDS:
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self.n] = old[: self.n]
            setattr(self, name, new)

    @property
    def live(self) -> np.ndarray:
        return np.flatnonzero(self.alive[: self.n])

    def slots_for(self, node: np.ndarray, lid: np.ndarray) -> np.ndarray:
        """FC slot of each ``(node, lid)`` pair, -1 when the FC has no such track."""
        get = self.index.get
        return np.fromiter((get((int(a), int(b)), -1) for a, b in zip(node, lid)), dtype=np.int64, count=len(node))

    def ages(self, t: int, slots: np.ndarray | None = None) -> np.ndarray:
        slots = self.live if slots is None else slots
        return t - self.v[slots]

    def combined(self, slots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return imm.combine(self.xm[slots], self.Pm[slots], self.mu[slots])

    def positions(self, t: int, slots: np.ndarray | None = None) -> np.ndarray:
        """Fused positions at ``t``."""
        self.advance(t)
        slots = self.live if slots is None else slots
        p = np.matmul(self.mu[slots][:, None, :], self.xm[slots, :, :2])[:, 0, :]
        return np.mod(p, self.size) if self.wrap else p

    # operations ----------------------------------------------------------
    def advance(self, t: int) -> None:
        """IMM prediction of every live track up to step ``t``."""
        while self.t < t:
            self.t += 1
            s = self.live
            if len(s) == 0:
                continue
            x0, P0, cbar = imm.mix(self.xm[s], self.Pm[s], self.mu[s], self.Pi[s])
            xp, Pp = imm.predict(x0, P0, self.omega[s], self.dt, self.Q)
            if self.wrap:
                shift = self.size * np.floor(xp[:, 0, :2] / self.size)
                xp[:, :, :2] -= shift[:, None, :]
            self.xm[s], self.Pm[s], self.mu[s] = xp, Pp, cbar

    def ingest(
        self,
        t: int,
        node: np.ndarray,
        lid: np.ndarray,
        state: np.ndarray,
        cov: np.ndarray,
        gamma: np.ndarray,
        mu: np.ndarray | None = None,
        omega: np.ndarray | None = None,
        p_stay: np.ndarray | None = None,
    ) -> np.ndarray:
        """Fuse reported confirmed tracks; returns the FC slot of each report.

        A report matching an existing source key gets a Kalman update that
        uses the node's state estimate and covariance as the measurement of
        the FC's combined prediction; the fused state seeds both models and the
        node's model probabilities, turn rate and transition estimate replace
        the FC's.  New keys open new tracks.  A key repeated within one call is
        rejected.
        """
        self.advance(t)
        n_rep = len(node)
        out = np.full(n_rep, -1, dtype=np.int64)
        if n_rep == 0:
            return out
        mu = np.tile([1.0, 0.0], (n_rep, 1)) if mu is None else np.asarray(mu, dtype=float)
        omega = np.zeros(n_rep) if omega is None else np.asarray(omega, dtype=float)
        p_stay = np.tile([1.0, 1.0], (n_rep, 1)) if p_stay is None else np.asarray(p_stay, dtype=float)
        seen: set[tuple[int, int]] = set()
        upd_rows, upd_slots, new_rows = [], [], []
        for i in range(n_rep):
            key = (int(node[i]), int(lid[i]))
            if key in seen:
                log.warning("duplicate report %s at t=%d rejected", key, t)
                continue
            seen.add(key)
            s = self.index.get(key, -1)
            if s >= 0 and self.alive[s]:
                upd_rows.append(i)
                upd_slots.append(s)
            else:
                new_rows.append(i)
        if upd_rows:
            r = np.asarray(upd_rows)
            s = np.asarray(upd_slots)
            age = t - self.v[s]
            pre = age[age > 0]
            if len(pre):
                self.peak_sum += float(pre.sum())
                self.peak_count += len(pre)
            xp, Pp = self.combined(s)
            y = state[r] - xp
            if self.wrap:
                y[:, :2] -= self.size * np.round(y[:, :2] / self.size)
            S = Pp + cov[r]
            G = np.linalg.solve(S, Pp).transpose(0, 2, 1)  # Pp S^-1 (both symmetric)
            xn = xp + np.matmul(G, y[..., None])[..., 0]
            Pn = Pp - np.matmul(G, Pp)
            Pn = 0.5 * (Pn + Pn.transpose(0, 2, 1))
            self._set(s, r, xn, Pn, gamma, mu, omega, p_stay, t)
            out[r] = s
        for i in new_rows:
            if self.n == len(self.alive):
                self._grow()
            s = self.n
            self.n += 1
            key = (int(node[i]), int(lid[i]))
            self.index[key] = s
            self.src_node[s], self.src_lid[s] = key
            self.alive[s] = True
            self._set(np.array([s]), np.array([i]), state[i][None], cov[i][None], gamma, mu, omega, p_stay, t)
            out[i] = s
        return out

    def _set(self, s, r, x, P, gamma, mu, omega, p_stay, t) -> None:
        if self.wrap:
            x = x.copy()
            x[:, :2] = np.mod(x[:, :2], self.size)
        self.xm[s] = x[:, None, :]
        self.Pm[s] = P[:, None, :, :]
        self.mu[s] = mu[r]
        self.omega[s] = omega[r]
        st = p_stay[r]
        self.Pi[s] = np.stack([np.stack([st[:, 0], 1 - st[:, 0]], 1), np.stack([1 - st[:, 1], st[:, 1]], 1)], 1)
        self.v[s] = t
        self.gamma[s] = gamma[r]

    def prune_stale(self, t: int) -> np.ndarray:
        """Drop tracks whose age reached ``max_age``; returns dropped slots.

        The age a track reaches when it is dropped is the last peak of its age
        process and enters the peak-age tally like an age just before a reset.
        """
        live = self.live
        drop = live[t - self.v[live] >= self.max_age]
        if len(drop):
            self.peak_sum += float(np.sum(t - self.v[drop]))
            self.peak_count += len(drop)
        for s in drop:
            self.alive[s] = False
            self.index.pop((int(self.src_node[s]), int(self.src_lid[s])), None)
        return drop

    def closest_covering(self, points: np.ndarray) -> np.ndarray:
        """Closest node whose disk contains each point; -1 when none does.

        Ties go to the lowest node id (``argmin`` returns the first minimum).
        """
        if len(points) == 0 or len(self.nodes) == 0:
            return np.full(len(points), -1, dtype=np.int64)
        d = points[:, None, :] - self.nodes[None, :, :]
        if self.wrap:
            d -= self.size * np.round(d / self.size)
        dist = np.hypot(d[..., 0], d[..., 1])
        dist = np.where(dist <= self.radius, dist, np.inf)
        best = np.argmin(dist, axis=1)
        return np.where(np.isfinite(dist[np.arange(len(points)), best]), best, -1)

    def assign_responsibility(self, t: int) -> dict[int, int]:
        """Map every live FC slot to its responsible node (closest covering)."""
        live = self.live
        owner = self.closest_covering(self.positions(t, live))
        return {int(s): int(n) for s, n in zip(live, owner) if n >= 0}


def responsibility_sets(assignment: dict[int, int]) -> dict[int, set[int]]:
    """Inverse map node -> set of FC slots it is responsible for."""
    inv: dict[int, set[int]] = {}
    for slot, node in assignment.items():
        inv.setdefault(node, set()).add(slot)
    return inv
