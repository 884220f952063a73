"""Ground-truth target motion: Markov-switched constant-velocity / constant-turn
kinematics with optional birth and death.

Positions are in km, velocities in km/s, turn rates in rad/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import ScenarioConfig
from .geometry import Region, sample_point_pattern
from .markov import CT, CV, MotionModelState, sample_transition_matrix


@dataclass(frozen=True)
class TargetTruth:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    turn_rate: float
    motion_state: MotionModelState
    transition: np.ndarray
    alive: bool = True
    birth_time: int = 0
    death_time: int | None = None


def turn_step(pos: np.ndarray, vel: np.ndarray, omega: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact coordinated-turn update, vectorised over leading axes.

    ``omega == 0`` degenerates to straight-line motion.
    """
    w = np.asarray(omega, dtype=float)
    wdt = w * dt
    small = np.abs(wdt) < 1e-9
    safe_w = np.where(small, 1.0, w)
    s, c = np.sin(wdt), np.cos(wdt)
    a = np.where(small, dt, s / safe_w)
    b = np.where(small, 0.0, (1.0 - c) / safe_w)
    vx, vy = vel[..., 0], vel[..., 1]
    new_pos = pos + np.stack([a * vx - b * vy, b * vx + a * vy], axis=-1)
    new_vel = np.stack([c * vx - s * vy, s * vx + c * vy], axis=-1)
    return new_pos, new_vel


def propagate_kinematics(
    truth: TargetTruth,
    dt: float,
    accel_std: float = 0.0,
    rng: np.random.Generator | None = None,
    region: Region | None = None,
    wrap: bool = False,
    t: int | None = None,
) -> TargetTruth:
    """Advance one target by ``dt`` under its current motion state."""
    if not truth.alive:
        return truth
    omega = truth.turn_rate if truth.motion_state == CT else 0.0
    pos, vel = turn_step(truth.position, truth.velocity, np.asarray(omega), dt)
    if accel_std > 0.0:
        if rng is None:
            raise ValueError("process noise needs an rng")
        acc = rng.normal(0.0, accel_std, size=2)
        pos = pos + 0.5 * acc * dt * dt
        vel = vel + acc * dt
    alive = True
    death = truth.death_time
    if region is not None:
        if wrap:
            pos = np.mod(pos, region.size)
        elif not region.contains(pos)[0]:
            alive, death = False, t
    return replace(truth, position=pos, velocity=vel, alive=alive, death_time=death)


@dataclass
class TruthHistory:
    """Ground truth for one replication; index 0 is the initial scene."""

    position: np.ndarray  # (T+1, M, 2)
    velocity: np.ndarray  # (T+1, M, 2)
    gamma: np.ndarray  # (T+1, M) motion state
    alive: np.ndarray  # (T+1, M)
    transition: np.ndarray  # (M, 2, 2)
    birth: np.ndarray  # (M,)

    @property
    def n_targets(self) -> int:
        return self.position.shape[1]

    @property
    def steps(self) -> int:
        return self.position.shape[0] - 1


def _turn_rates(n: int, cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Turn rates with magnitude U[min, max] and a random direction."""
    mag = rng.uniform(cfg.turn_rate_min, cfg.turn_rate_max, size=n)
    sign = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
    return sign * mag


def _new_targets(n: int, cfg: ScenarioConfig, rng: np.random.Generator):
    speed = rng.uniform(cfg.speed_min_mps, cfg.speed_max_mps, size=n) / 1000.0
    heading = rng.uniform(0.0, 2.0 * math.pi, size=n)
    vel = np.column_stack([speed * np.cos(heading), speed * np.sin(heading)])
    trans = np.array([sample_transition_matrix(rng, cfg.p_stay_cv_range, cfg.p_stay_ct_range) for _ in range(n)])
    trans = trans.reshape(n, 2, 2)
    # start in the stationary regime of each target's chain
    p_ct = trans[:, 0, 1] / (trans[:, 0, 1] + trans[:, 1, 0])
    gamma = (rng.uniform(size=n) < p_ct).astype(np.int8)
    omega = _turn_rates(n, cfg, rng)
    life = (
        rng.exponential(cfg.mean_lifetime_s, size=n) if math.isfinite(cfg.mean_lifetime_s) else np.full(n, np.inf)
    )
    return vel, trans, gamma, omega, life


def simulate_truth(
    cfg: ScenarioConfig,
    region: Region,
    scene_rng: np.random.Generator,
    motion_rng: np.random.Generator,
    steps: int | None = None,
) -> TruthHistory:
    """Roll out every target over ``steps`` CPIs.

    Within a step the motion state is resampled first (a turn rate is drawn on
    each entry into the turn state) and the kinematics then follow the new
    state.
    """
    steps = cfg.steps if steps is None else steps
    dt = cfg.dt
    init = sample_point_pattern(region, cfg.target_density, scene_rng).points
    m0 = len(init)
    vel0, trans0, gamma0, omega0, life0 = _new_targets(m0, cfg, scene_rng)

    # births first, so the roster size is known up front
    births_per_step = (
        motion_rng.poisson(cfg.birth_rate * region.area * dt, size=steps) if cfg.birth_rate > 0 else np.zeros(steps, int)
    )
    n_born = int(births_per_step.sum())
    born_pos = motion_rng.uniform(size=(n_born, 2)) * region.size
    vel_b, trans_b, gamma_b, omega_b, life_b = _new_targets(n_born, cfg, motion_rng)
    born_t = np.repeat(np.arange(1, steps + 1), births_per_step)

    M = m0 + n_born
    P = np.zeros((steps + 1, M, 2))
    V = np.zeros((steps + 1, M, 2))
    G = np.zeros((steps + 1, M), dtype=np.int8)
    A = np.zeros((steps + 1, M), dtype=bool)
    trans = np.concatenate([trans0, trans_b]).reshape(M, 2, 2)
    birth = np.concatenate([np.zeros(m0, int), born_t])
    death_at = np.concatenate([life0, born_t + life_b])

    pos = np.concatenate([init, born_pos]).reshape(M, 2)
    vel = np.concatenate([vel0, vel_b]).reshape(M, 2)
    gamma = np.concatenate([gamma0, gamma_b]).astype(np.int8)
    omega = np.concatenate([omega0, omega_b])
    alive = birth == 0
    P[0], V[0], G[0], A[0] = pos, vel, gamma, alive
    accel = cfg.process_noise_mps2 / 1000.0
    idx = np.arange(M)
    for t in range(1, steps + 1):
        # motion-state switch
        u = motion_rng.uniform(size=M)
        stay = trans[idx, gamma, gamma]
        new_gamma = np.where(u < stay, gamma, 1 - gamma).astype(np.int8)
        entering_ct = (new_gamma == CT) & (gamma == CV)
        if entering_ct.any():
            omega = omega.copy()
            omega[entering_ct] = _turn_rates(int(entering_ct.sum()), cfg, motion_rng)
        gamma = new_gamma
        w = np.where(gamma == CT, omega, 0.0)
        pos, vel = turn_step(pos, vel, w, dt)
        if accel > 0:
            acc = motion_rng.normal(0.0, accel, size=(M, 2))
            pos = pos + 0.5 * acc * dt * dt
            vel = vel + acc * dt
        born_now = birth == t
        alive = alive | born_now
        if cfg.wrap:
            pos = np.mod(pos, region.size)
        else:
            alive = alive & region.contains(pos)
        alive = alive & (t < death_at)
        P[t], V[t], G[t], A[t] = pos, vel, gamma, alive
    # death is absorbing: a target that leaves never re-enters
    A = np.logical_and.accumulate(A | (np.arange(steps + 1)[:, None] < birth[None, :]), axis=0) & (
        np.arange(steps + 1)[:, None] >= birth[None, :]
    )
    return TruthHistory(position=P, velocity=V, gamma=G, alive=A, transition=trans, birth=birth)
