"""Radar-node sensing and local tracking.

Every node tracks in its own local frame (positions relative to the node), so
toroidal wrap-around never splits a track.  All nodes of a replication share
one :class:`NodeBank`, which keeps every local track in flat arrays and runs
the IMM filters for all of them in a single batched pass per CPI.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import imm
from .config import ScenarioConfig
from .geometry import Region, displacement, sample_in_disk


class InterestReason(IntEnum):
    NONE = 0
    TARGET_ENTERED = 1
    TARGET_EXITED = 2
    MOTION_STATE_CHANGED = 3


@dataclass(frozen=True)
class Measurement:
    node_id: int
    position: np.ndarray  # node-relative km
    timestamp: int
    origin: int = -1  # truth id; -1 marks a false alarm
    variance: float = 0.0  # km^2, per axis

    @property
    def is_false_alarm(self) -> bool:
        return self.origin < 0


@dataclass(frozen=True)
class TrackReport:
    local_id: int
    state: np.ndarray  # [px, py, vx, vy], global coordinates
    covariance: np.ndarray
    motion_state: int
    variance: float  # sigma_{n,m}, km^2
    detected: bool


@dataclass(frozen=True)
class NodeUpdate:
    node_id: int
    timestamp: int
    tracks: tuple[TrackReport, ...]


@dataclass(frozen=True)
class InterestFlag:
    node_id: int
    raised: bool
    reason: InterestReason = InterestReason.NONE


def sigma_for(distance_km: float | np.ndarray, radius_km: float, sigma0_km: float, sigma_max_km2: float = 1.0):
    """Measurement variance (km^2) for a target at ``distance_km`` from the node.

    Variance grows with squared normalised range, ``sigma0^2 (1 + (d/r)^2)``;
    pairs outside the coverage disk get ``sigma_max_km2``.
    """
    d = np.asarray(distance_km, dtype=float)
    var = sigma0_km**2 * (1.0 + (d / radius_km) ** 2)
    out = np.where(d <= radius_km, var, sigma_max_km2)
    return float(out) if out.ndim == 0 else out


def estimate_transitions(counts: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Row-normalised transition counts; unvisited rows fall back to ``prior``."""
    counts = np.asarray(counts, dtype=float)
    prior = np.asarray(prior, dtype=float)
    tot = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.where(tot > 0, counts / np.where(tot > 0, tot, 1.0), prior)
    return est


def observe(
    node_id: int,
    node_pos: np.ndarray,
    truth_pos: np.ndarray,
    truth_alive: np.ndarray,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
    t: int,
    region: Region | None = None,
) -> list[Measurement]:
    """Detections and false alarms of a single node during one CPI."""
    region = region or Region(cfg.region_width_km, cfg.region_height_km)
    r = cfg.disk_radius_km
    rel = displacement(truth_pos, np.atleast_2d(node_pos), region, cfg.wrap)[:, 0, :]
    dist = np.hypot(rel[:, 0], rel[:, 1])
    out: list[Measurement] = []
    for m in np.flatnonzero(truth_alive & (dist <= r)):
        if rng.uniform() >= cfg.p_detection:
            continue
        var = sigma_for(dist[m], r, cfg.sigma0_km)
        z = rel[m] + rng.normal(0.0, math.sqrt(var), size=2)
        out.append(Measurement(node_id, z, t, int(m), var))
    n_fa = rng.binomial(cfg.n_cells, cfg.p_false_alarm) if cfg.p_false_alarm > 0 else 0
    for z in sample_in_disk(np.zeros(2), r, n_fa, rng):
        out.append(Measurement(node_id, z, t, -1, sigma_for(np.hypot(*z), r, cfg.sigma0_km)))
    return out


@dataclass
class NodeStep:
    """Snapshot of every node's confirmed tracks after one CPI."""

    t: int
    node: np.ndarray
    lid: np.ndarray
    state: np.ndarray  # (K, 4) global coordinates
    cov: np.ndarray  # (K, 4, 4)
    sigma: np.ndarray  # (K,) km^2
    gamma: np.ndarray  # (K,) estimated motion state
    detected: np.ndarray  # (K,) detection this CPI
    p_stay: np.ndarray  # (K, 2) estimated stay probabilities (CV, CT)
    mu: np.ndarray  # (K, 2) model probabilities (CV, CT)
    omega: np.ndarray  # (K,) estimated turn rate, rad/s
    truth: np.ndarray  # (K,) truth id of the last associated detection
    interest: np.ndarray  # (N,) bool
    reason: np.ndarray  # (N,) InterestReason codes
    n_detections: int = 0


_GROW = 64


def _greedy_assign(d2: np.ndarray, gate: float, assoc: np.ndarray, used_z: np.ndarray) -> None:
    """Global-nearest-neighbour pairing in increasing distance, in place."""
    ki, zi = np.nonzero(d2 <= gate)
    if len(ki) == 0:
        return
    for o in np.argsort(d2[ki, zi], kind="stable"):
        k, j = ki[o], zi[o]
        if assoc[k] < 0 and not used_z[j]:
            assoc[k] = j
            used_z[j] = True


class NodeBank:
    """All local tracks of all nodes in one replication."""

    def __init__(
        self,
        nodes: np.ndarray,
        cfg: ScenarioConfig,
        region: Region,
        ct_accel_scale: float = imm.CT_ACCEL_SCALE,
        omega_gain: float = 1.0,
        mix_pseudo: float = 1e9,
        recovery_sigma: float = 5.0,
    ):
        self.nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        self.cfg = cfg
        self.region = region
        self.radius = cfg.disk_radius_km
        self.sigma0 = cfg.sigma0_km
        self.sigma_max = cfg.sigma_max_m2 / 1e6
        q = cfg.process_noise_mps2 / 1000.0
        # the turn model gets extra manoeuvre noise so it can follow a fresh turn
        self.Q = np.stack([imm.white_accel_q(q, cfg.dt), imm.white_accel_q(q * ct_accel_scale, cfg.dt)])
        self.omega_gain = omega_gain
        self.mix_pseudo = mix_pseudo
        self.recovery_sigma = recovery_sigma
        self.prior = np.array(cfg.transition_prior)
        self.init_mu = np.array([self.prior[1, 0], self.prior[0, 1]]) / (self.prior[1, 0] + self.prior[0, 1])
        self.gamma_scale = self.init_mu.copy()
        self.v0_var = (max(cfg.speed_max_mps, 1.0) / 1000.0) ** 2
        self._next_lid = np.zeros(len(self.nodes), dtype=np.int64)
        self.K = 0
        self._alloc(_GROW)
        self.t = 0

    # storage --------------------------------------------------------------
    def _alloc(self, cap: int) -> None:
        def grow(name, shape, dtype=float, fill=0):
            old = getattr(self, name, None)
            new = np.full((cap,) + shape, fill, dtype=dtype)
            if old is not None:
                new[: self.K] = old[: self.K]
            setattr(self, name, new)

        grow("node", (), np.int64)
        grow("lid", (), np.int64)
        grow("x", (2, 4))
        grow("P", (2, 4, 4))
        grow("mu", (2,))
        grow("omega", ())
        grow("heading", ())
        grow("n_det", (), np.int64)
        grow("misses", (), np.int64)
        grow("last_det", (), np.int64)
        grow("gamma", (), np.int8)
        grow("counts", (2, 2))
        grow("truth", (), np.int64, -1)
        self.cap = cap

    def _keep(self, mask: np.ndarray) -> None:
        idx = np.flatnonzero(mask)
        for name in ("node", "lid", "x", "P", "mu", "omega", "heading", "n_det", "misses", "last_det", "gamma", "counts", "truth"):
            arr = getattr(self, name)
            arr[: len(idx)] = arr[idx]
        self.K = len(idx)

    @property
    def confirmed(self) -> np.ndarray:
        return self.n_det[: self.K] > 2

    # sensing -------------------------------------------------------------
    def measure(self, truth_pos: np.ndarray, truth_alive: np.ndarray, rng: np.random.Generator):
        """Vectorised detections of every node; returns (node, z, var, origin)."""
        cfg = self.cfg
        alive = np.flatnonzero(truth_alive)
        N = len(self.nodes)
        if N == 0:
            return np.zeros(0, int), np.zeros((0, 2)), np.zeros(0), np.zeros(0, int)
        rel = displacement(truth_pos[alive], self.nodes, self.region, cfg.wrap)  # (M, N, 2)
        dist = np.hypot(rel[..., 0], rel[..., 1])
        covered = dist <= self.radius
        u = rng.uniform(size=covered.shape)
        det = covered & (u < cfg.p_detection)
        mi, ni = np.nonzero(det)
        var = sigma_for(dist[mi, ni], self.radius, self.sigma0, self.sigma_max)
        z = rel[mi, ni] + rng.normal(size=(len(mi), 2)) * np.sqrt(var)[:, None]
        nodes_out, z_out, var_out, org = [ni], [z], [np.atleast_1d(var)], [alive[mi]]
        if cfg.p_false_alarm > 0:
            n_fa = rng.binomial(cfg.n_cells, cfg.p_false_alarm, size=N)
            tot = int(n_fa.sum())
            if tot:
                fa_nodes = np.repeat(np.arange(N), n_fa)
                fz = sample_in_disk(np.zeros(2), self.radius, tot, rng)
                nodes_out.append(fa_nodes)
                z_out.append(fz)
                var_out.append(sigma_for(np.hypot(fz[:, 0], fz[:, 1]), self.radius, self.sigma0, self.sigma_max))
                org.append(np.full(tot, -1))
        return (
            np.concatenate(nodes_out).astype(np.int64),
            np.concatenate(z_out).reshape(-1, 2),
            np.concatenate(var_out),
            np.concatenate(org).astype(np.int64),
        )

    # tracking ------------------------------------------------------------
    def _transition_for_mixing(self) -> np.ndarray:
        K = self.K
        # shrink the raw tallies toward the prior so a short, one-sided history
        # cannot lock the filter into a single model
        c = self.counts[:K] + self.mix_pseudo * self.prior
        est = np.clip(c / c.sum(axis=-1, keepdims=True), 0.05, 0.95)
        return est / est.sum(axis=-1, keepdims=True)

    def step(self, t: int, z_node: np.ndarray, z: np.ndarray, z_var: np.ndarray, z_origin: np.ndarray) -> NodeStep:
        cfg = self.cfg
        N = len(self.nodes)
        K = self.K
        interest = np.zeros(N, dtype=bool)
        reason = np.zeros(N, dtype=np.int8)
        dt = cfg.dt

        was_confirmed = self.n_det[:K] > 2
        prev_gamma = self.gamma[:K].copy()
        detected = np.zeros(K, dtype=bool)
        assoc = np.full(K, -1)
        if K:
            Pi = self._transition_for_mixing()
            x0, P0, cbar = imm.mix(self.x[:K], self.P[:K], self.mu[:K], Pi)
            xp, Pp = imm.predict(x0, P0, self.omega[:K], dt, self.Q)
            self.x[:K], self.P[:K] = xp, Pp
            if len(z):
                xc, _ = imm.combine(xp, Pp, self.mu[:K])
                rng_k = np.hypot(xc[:, 0], xc[:, 1])
                R_k = sigma_for(rng_k, self.radius, self.sigma0, self.sigma_max)
                R_k = np.minimum(np.atleast_1d(R_k), self.sigma0**2 * 2.0)
                # a measurement may gate on either model, so a fresh turn the
                # constant-velocity prediction cannot explain still associates
                d2 = np.minimum(
                    imm.mahalanobis_sq(xp[:, 0], Pp[:, 0], R_k, z),
                    imm.mahalanobis_sq(xp[:, 1], Pp[:, 1], R_k, z),
                )
                d2 = np.where(self.node[:K, None] == z_node[None, :], d2, np.inf)
                used_z = np.zeros(len(z), dtype=bool)
                _greedy_assign(d2, cfg.gate_sigma**2, assoc, used_z)
                # second chance for confirmed tracks only: a sharp turn can push
                # the measurement just outside the gate, and letting it seed a
                # new track would split the target in two
                if self.recovery_sigma > cfg.gate_sigma:
                    lost = (assoc < 0) & (self.n_det[:K] > 2)
                    if lost.any():
                        d2r = np.where(lost[:, None] & ~used_z[None, :], d2, np.inf)
                        _greedy_assign(d2r, self.recovery_sigma**2, assoc, used_z)
            detected = assoc >= 0
            if detected.any():
                k = np.flatnonzero(detected)
                j = assoc[k]
                xu, Pu, lik = imm.update(xp[k], Pp[k], z[j], z_var[j])
                self.x[k], self.P[k] = xu, Pu
                self.mu[k] = imm.update_probs(cbar[k], lik)
                new_gamma = np.argmax(self.mu[k] / self.gamma_scale, axis=1).astype(np.int8)
                had_prev = self.n_det[k] > 0
                # transition tallies between consecutive detections
                kk = k[had_prev]
                np.add.at(self.counts, (kk, self.gamma[kk], new_gamma[had_prev]), 1.0)
                self.gamma[k] = new_gamma
                gap = np.maximum(t - self.last_det[k], 1)
                self.n_det[k] += 1
                self.misses[k] = 0
                self.last_det[k] = t
                self.truth[k] = z_origin[j]
                v_c = self.x[k, 1, 2:]  # the turn model follows a manoeuvre fastest
                head = np.arctan2(v_c[:, 1], v_c[:, 0])
                est = self.n_det[k] >= 3
                dtheta = np.angle(np.exp(1j * (head - self.heading[k])))
                w_env = max(cfg.turn_rate_max, 1e-3)
                w_meas = np.clip(dtheta / gap, -w_env, w_env)
                g = self.omega_gain
                self.omega[k] = np.where(est, (1 - g) * self.omega[k] + g * w_meas, self.omega[k])
                self.heading[k] = head
            self.misses[:K][~detected] += 1

        # drops: confirmed tracks after the local horizon, tentative ones sooner
        if K:
            conf = self.n_det[:K] > 2
            drop = np.where(conf, self.misses[:K] >= cfg.local_drop_steps, self.misses[:K] >= cfg.tentative_drop_steps)
            exited = drop & was_confirmed
            if exited.any():
                nodes_exit = np.unique(self.node[:K][exited])
                interest[nodes_exit] = True
                reason[nodes_exit] = InterestReason.TARGET_EXITED
            newly = conf & ~was_confirmed & ~drop
            if newly.any():
                nn = np.unique(self.node[:K][newly])
                interest[nn] = True
                reason[nn] = InterestReason.TARGET_ENTERED
            changed = conf & was_confirmed & detected & (self.gamma[:K] != prev_gamma) & ~drop
            if changed.any():
                nc = np.unique(self.node[:K][changed])
                fresh = reason[nc] == InterestReason.NONE
                interest[nc] = True
                reason[nc[fresh]] = InterestReason.MOTION_STATE_CHANGED
            if drop.any():
                self._keep(~drop)
                detected = detected[~drop]

        # new tentative tracks from unused measurements
        if len(z):
            used = np.zeros(len(z), dtype=bool)
            if K:
                a = assoc[assoc >= 0]
                used[a] = True
            new = np.flatnonzero(~used)
            if len(new):
                self._spawn(new, z_node, z, z_var, z_origin, t)
                detected = np.concatenate([detected, np.ones(len(new), dtype=bool)])

        self.t = t
        return self.snapshot(t, interest, reason, detected, len(z))

    def _spawn(self, idx, z_node, z, z_var, z_origin, t):
        n = len(idx)
        while self.K + n > self.cap:
            self._alloc(self.cap * 2)
        s = slice(self.K, self.K + n)
        nodes = z_node[idx]
        self.node[s] = nodes
        lids = np.empty(n, dtype=np.int64)
        for i, nd in enumerate(nodes):
            lids[i] = self._next_lid[nd]
            self._next_lid[nd] += 1
        self.lid[s] = lids
        x = np.zeros((n, 4))
        x[:, :2] = z[idx]
        self.x[s] = x[:, None, :]
        P = np.zeros((n, 4, 4))
        P[:, 0, 0] = P[:, 1, 1] = z_var[idx]
        P[:, 2, 2] = P[:, 3, 3] = self.v0_var
        self.P[s] = P[:, None, :, :]
        self.mu[s] = self.init_mu
        self.omega[s] = 0.0
        self.heading[s] = 0.0
        self.n_det[s] = 1
        self.misses[s] = 0
        self.last_det[s] = t
        self.gamma[s] = np.argmax(self.init_mu)
        self.counts[s] = 0.0
        self.truth[s] = z_origin[idx]
        self.K += n

    def snapshot(self, t, interest, reason, detected, n_det_total=0) -> NodeStep:
        K = self.K
        conf = self.n_det[:K] > 2
        k = np.flatnonzero(conf)
        xc, Pc = imm.combine(self.x[k], self.P[k], self.mu[k])
        rel_d = np.hypot(xc[:, 0], xc[:, 1])
        sig = np.atleast_1d(sigma_for(rel_d, self.radius, self.sigma0, self.sigma_max))
        state = xc.copy()
        state[:, :2] = self.nodes[self.node[k]] + xc[:, :2]
        if self.cfg.wrap:
            state[:, :2] = np.mod(state[:, :2], self.region.size)
        est = estimate_transitions(self.counts[k], self.prior)
        return NodeStep(
            t=t,
            node=self.node[k].copy(),
            lid=self.lid[k].copy(),
            state=state,
            cov=Pc,
            sigma=sig,
            gamma=self.gamma[k].copy(),
            detected=detected[k].copy() if len(detected) == K else np.zeros(len(k), bool),
            p_stay=np.stack([est[:, 0, 0], est[:, 1, 1]], axis=1) if len(k) else np.zeros((0, 2)),
            mu=self.mu[k].copy(),
            omega=self.omega[k].copy(),
            truth=self.truth[k].copy(),
            interest=interest,
            reason=reason,
            n_detections=n_det_total,
        )

    # per-node views --------------------------------------------------------
    def build_update(self, node_id: int, step: NodeStep) -> NodeUpdate:
        sel = np.flatnonzero(step.node == node_id)
        return NodeUpdate(
            node_id=node_id,
            timestamp=step.t,
            tracks=tuple(
                TrackReport(
                    local_id=int(step.lid[i]),
                    state=step.state[i],
                    covariance=step.cov[i],
                    motion_state=int(step.gamma[i]),
                    variance=float(step.sigma[i]),
                    detected=bool(step.detected[i]),
                )
                for i in sel
            ),
        )

    @staticmethod
    def interest_flag(node_id: int, step: NodeStep) -> InterestFlag:
        return InterestFlag(node_id, bool(step.interest[node_id]), InterestReason(int(step.reason[node_id])))


def run_node_layer(
    nodes: np.ndarray, truth, cfg: ScenarioConfig, region: Region, rng: np.random.Generator
) -> list[NodeStep]:
    """Sense and track for every CPI of a replication.

    Node-side processing never depends on the FC, so it is computed once and
    shared by every scheduling policy evaluated on the same replication.
    """
    bank = NodeBank(nodes, cfg, region)
    out = []
    for t in range(1, truth.steps + 1):
        zn, z, zv, zo = bank.measure(truth.position[t], truth.alive[t], rng)
        out.append(bank.step(t, zn, z, zv, zo))
    return out
