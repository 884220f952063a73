"""Age-of-incorrect-information threshold policy for one node.

A node watches the joint estimated motion state of the targets it is
responsible for.  After a send at time ``v`` with stored joint state ``s`` the
penalty is ``(t - v) * [x_t != s]``; a threshold-``p`` policy sends at the
first ``t`` with ``t - v >= p`` and ``x_t != s``.

For independent two-state components the mean length of such a cycle has a
closed form.  Writing ``R_p(s) = P(x_{v+p} = s | x_v = s)`` and ``T_ss`` for
the probability of staying in ``s`` for one step,

    E[L_p(s)] = p + R_p(s) / (1 - T_ss),

because at ``v + p`` either the state already differs (send at once) or the
node waits a geometric time for the chain to leave ``s``.  The update rate of
the deterministic threshold-``p`` policy is ``A(p) = 1 / E[L_p(s)]``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .markov import CombinedChain, stationary_distribution

log = logging.getLogger(__name__)

P_MAX = 100_000


def _components(stays: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    stays = np.atleast_2d(np.asarray(stays, dtype=float))
    a = 1.0 - stays[:, 0]  # CV -> CT
    b = 1.0 - stays[:, 1]  # CT -> CV
    return a, b


def return_probability(stays: np.ndarray, state: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``P(x_p = s | x_0 = s)`` for the product of two-state chains.

    ``stays`` is (k, 2) holding each component's stay probabilities (CV, CT);
    ``p`` may be an array of step counts.
    """
    a, b = _components(stays)
    state = np.asarray(state, dtype=int).reshape(-1)
    p = np.asarray(p, dtype=float)
    tot = a + b
    live = tot > 0.0  # a frozen component always returns
    a, b, state, tot = a[live], b[live], state[live], tot[live]
    pi_s = np.where(state == 0, b, a) / tot
    lam = 1.0 - tot
    terms = pi_s[:, None] + (1.0 - pi_s)[:, None] * np.power(lam[:, None], p.reshape(1, -1))
    return np.prod(terms, axis=0).reshape(p.shape)


def joint_stay(stays: np.ndarray, state: np.ndarray) -> float:
    stays = np.atleast_2d(np.asarray(stays, dtype=float))
    state = np.asarray(state, dtype=int).reshape(-1)
    return float(np.prod(stays[np.arange(len(state)), state]))


def update_rate(p, stays: np.ndarray, state: np.ndarray) -> np.ndarray | float:
    """Long-run rate ``A(p)`` of the deterministic threshold-``p`` policy."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 1):
        raise ValueError("threshold must be >= 1")
    q = 1.0 - joint_stay(stays, state)
    if q <= 0.0:
        out = np.zeros_like(p_arr)
    else:
        out = 1.0 / (p_arr + return_probability(stays, state, p_arr) / q)
    return float(out) if out.ndim == 0 else out


def update_rate_stationary(p: int, components: list[np.ndarray], state) -> float:
    """``A(p)`` from the stationary law of the (age, joint state) chain.

    An independent route to :func:`update_rate`: the chain tracks the capped
    age ``min(t - v, p)`` and the full joint state, and every send restarts
    the cycle from the stored state.  Only practical for a handful of
    components.
    """
    chain = CombinedChain([np.asarray(c, dtype=float) for c in components])
    T = chain.matrix()
    n = T.shape[0]
    sizes = chain.sizes
    s = int(np.ravel_multi_index(tuple(int(v) for v in state), sizes))
    n_age = p + 1
    M = np.zeros((n_age * n, n_age * n))
    send = np.zeros(n_age * n)
    for age in range(n_age):
        nxt_age = min(age + 1, p)
        for x in range(n):
            i = age * n + x
            for y in range(n):
                w = T[x, y]
                if w == 0.0:
                    continue
                if nxt_age >= p and y != s:
                    M[i, s] += w  # send, restart at age 0 in the stored state
                    send[i] += w
                else:
                    M[i, nxt_age * n + y] += w
    # states other than (0, s) at age 0 are transient; drop them before solving
    keep = np.ones(n_age * n, dtype=bool)
    keep[[x for x in range(n) if x != s]] = False
    idx = np.flatnonzero(keep)
    Msub = M[np.ix_(idx, idx)]
    Msub = Msub / Msub.sum(axis=1, keepdims=True)
    mu = np.zeros(n_age * n)
    mu[idx] = _stationary(Msub)
    return float(mu @ send)


def _stationary(T: np.ndarray) -> np.ndarray:
    n = T.shape[0]
    A = T.T - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    return np.linalg.solve(A, rhs)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Randomised threshold pair for one cycle.

    ``rho_a`` and ``rho_b`` are the shares of updates produced by thresholds
    ``p0`` and ``p0 + 1``; ``weight`` is the matching probability of running
    threshold ``p0`` for a whole cycle, which makes the mean cycle length
    exactly ``1 / delta``.
    """

    p0: float
    rho_a: float
    rho_b: float
    a0: float
    a1: float
    delta: float

    @property
    def weight(self) -> float:
        if self.delta <= 0.0 or not math.isfinite(self.p0):
            return 1.0
        if self.rho_b == 0.0:
            return 1.0
        return min(1.0, self.rho_a * self.a0 / self.delta)

    @property
    def never(self) -> bool:
        return not math.isfinite(self.p0)

    def draw(self, rng: np.random.Generator) -> float:
        """Threshold to use for the next cycle."""
        if self.never:
            return math.inf
        if self.rho_b == 0.0:
            return self.p0
        return self.p0 if rng.uniform() < self.weight else self.p0 + 1


NEVER = ThresholdPolicy(math.inf, 0.0, 0.0, 0.0, 0.0, 0.0)


def aoii_threshold(stays: np.ndarray, state: np.ndarray, delta: float, p_max: int = P_MAX) -> ThresholdPolicy:
    """Smallest ``p0`` with ``A(p0 + 1) <= delta <= A(p0)`` and the mixing shares."""
    if delta <= 0.0:
        log.warning("non-positive AoII budget %.3g: node will never update", delta)
        return NEVER
    a1 = update_rate(1, stays, state)
    if delta >= a1:
        return ThresholdPolicy(1, 1.0, 0.0, a1, a1, delta)
    # A(p) ~ 1/p, so the crossing sits near 1/delta
    hi = int(min(p_max, max(4, math.ceil(2.0 / delta) + 2)))
    ps = np.arange(1, hi + 1)
    A = update_rate(ps, stays, state)
    below = np.flatnonzero(A[1:] <= delta)
    if len(below) == 0:
        return ThresholdPolicy(hi, 1.0, 0.0, A[-1], A[-1], delta)
    i = int(below[0])
    p0 = int(ps[i])
    A0, A1 = float(A[i]), float(A[i + 1])
    span = A0 - A1
    if span <= 0.0:
        return ThresholdPolicy(p0, 1.0, 0.0, A0, A1, delta)
    rho_a = (delta - A1) / span
    rho_b = (A0 - delta) / span
    return ThresholdPolicy(p0, rho_a, rho_b, A0, A1, delta)


def aoii_budget(alpha: float, m_n: int) -> float:
    """Per-target rate budget ``alpha / M_n``; zero when the node has no targets."""
    if m_n <= 0:
        return 0.0
    return alpha / m_n


def penalty(t: int, v: int, current, stored) -> int:
    """Time penalty ``t - v`` gated by an information penalty (state mismatch)."""
    return (t - v) if tuple(current) != tuple(stored) else 0


def sample_chain_path(stays: np.ndarray, steps: int, rng: np.random.Generator, state0) -> np.ndarray:
    """Joint state codes ``x_1..x_steps`` of independent two-state chains.

    Each component is built from alternating geometric sojourns, so no
    per-step Python loop is needed.  Code bit ``j`` (most significant first)
    is component ``j``'s state.
    """
    stays = np.atleast_2d(np.asarray(stays, dtype=float))
    k = len(stays)
    code = np.zeros(steps + 1, dtype=np.int64)
    for j in range(k):
        s0 = int(state0[j])
        leave = 1.0 - stays[j]
        path = np.empty(steps + 1, dtype=np.int8)
        if leave[s0] <= 0.0:
            path[:] = s0
        else:
            # enough sojourns to cover the horizon with overwhelming probability
            mean = 0.5 * (1.0 / max(leave[0], 1e-12) + 1.0 / max(leave[1], 1e-12))
            n = int(2 * steps / max(mean, 1.0)) + 64
            pos, cur, out = 0, s0, []
            while pos <= steps:
                states = (cur + np.arange(n)) % 2
                p_leave = leave[states]
                lens = np.where(p_leave > 0, rng.geometric(np.where(p_leave > 0, p_leave, 1.0)), steps + 1)
                out.append((states, lens))
                pos += int(lens.sum())
                cur = int((states[-1] + 1) % 2)
            states = np.concatenate([o[0] for o in out])
            lens = np.concatenate([o[1] for o in out])
            path[:] = np.repeat(states, lens)[: steps + 1]
        code = code * 2 + path
    return code[1:]


def simulate_threshold_rate(
    stays: np.ndarray, delta: float, steps: int, rng: np.random.Generator, state0=None
) -> float:
    """Monte Carlo update rate of the randomised threshold policy.

    Simulates the product chain itself and re-derives the threshold pair
    from the stored state at the start of every cycle.
    """
    stays = np.atleast_2d(np.asarray(stays, dtype=float))
    k = len(stays)
    if state0 is None:
        state0 = []
        for a, b in stays:
            pi_ct = (1 - a) / ((1 - a) + (1 - b)) if (2 - a - b) > 0 else 0.0
            state0.append(int(rng.uniform() < pi_ct))
    state0 = np.asarray(state0, dtype=int)
    code = sample_chain_path(stays, steps, rng, state0)
    # first index >= i whose code differs from code[i]
    change = np.flatnonzero(np.diff(code)) + 1
    run_end = np.full(steps, steps, dtype=np.int64)
    if len(change):
        nxt = np.searchsorted(change, np.arange(steps), side="right")
        ok = nxt < len(change)
        run_end[ok] = change[nxt[ok]]
    bits = [(1 << (k - 1 - j)) for j in range(k)]
    cache: dict[int, ThresholdPolicy] = {}

    def policy_for(c: int) -> ThresholdPolicy:
        if c not in cache:
            s = [(c >> (k - 1 - j)) & 1 for j in range(k)]
            cache[c] = aoii_threshold(stays, np.array(s), delta)
        return cache[c]

    stored = int(sum(b * int(s) for b, s in zip(bits, state0)))
    v = 0  # time index of the last send; code[i] is the state at t = i + 1
    sends = 0
    while True:
        p = policy_for(stored).draw(rng)
        if not math.isfinite(p):
            break
        i = v + int(p) - 1  # earliest eligible time t = v + p
        if i >= steps:
            break
        if code[i] == stored:
            i = run_end[i]
            if i >= steps:
                break
        sends += 1
        v = i + 1
        stored = int(code[i])
    return sends / steps
