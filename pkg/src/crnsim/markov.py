"""Two-state motion-model chains and the Markov analytics built on them."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

K_MAX = 12


class MotionModelState(IntEnum):
    CONSTANT_VELOCITY = 0
    CONSTANT_TURN = 1


CV = MotionModelState.CONSTANT_VELOCITY
CT = MotionModelState.CONSTANT_TURN


class ChainError(ValueError):
    """Raised for malformed or degenerate Markov chains."""


def transition_matrix(p_stay_cv: float, p_stay_ct: float) -> np.ndarray:
    return np.array([[p_stay_cv, 1.0 - p_stay_cv], [1.0 - p_stay_ct, p_stay_ct]])


def check_stochastic(T: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ChainError(f"transition matrix must be square, got shape {T.shape}")
    if np.any(T < -tol) or np.any(T > 1 + tol):
        raise ChainError("transition probabilities must lie in [0, 1]")
    if np.any(np.abs(T.sum(axis=1) - 1.0) > tol):
        raise ChainError("transition matrix rows must sum to 1")
    return T


def sample_transition_matrix(
    rng: np.random.Generator,
    cv_range: tuple[float, float] = (0.7, 0.9),
    ct_range: tuple[float, float] = (0.5, 0.7),
) -> np.ndarray:
    p1 = rng.uniform(*cv_range)
    p2 = rng.uniform(*ct_range)
    return transition_matrix(p1, p2)


def step_motion_state(state: int, T: np.ndarray, rng: np.random.Generator) -> MotionModelState:
    row = np.asarray(T)[int(state)]
    # Two-state rows: a single uniform decides stay/switch.
    if len(row) == 2:
        return MotionModelState(int(state) if rng.uniform() < row[int(state)] else 1 - int(state))
    return MotionModelState(int(rng.choice(len(row), p=row)))


def _gth(T: np.ndarray) -> np.ndarray:
    """Grassmann-Taksar-Heyman elimination on a row-stochastic matrix."""
    A = np.array(T, dtype=float)
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0.0:
            raise ChainError("chain is reducible; stationary distribution is not unique")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
    return pi / pi.sum()


def stationary_distribution(T: np.ndarray) -> np.ndarray:
    """Stationary vector mu with mu T = mu.

    Two-state chains use the balance-equation closed form; larger chains use
    GTH elimination, which stays accurate for nearly decomposable matrices.
    """
    T = check_stochastic(T, tol=1e-9)
    if T.shape == (2, 2):
        a, b = T[0, 1], T[1, 0]
        if a + b <= 0.0:
            raise ChainError("chain with no transitions between states has no unique stationary distribution")
        return np.array([b, a]) / (a + b)
    return _gth(T)


def entropy_rate(T: np.ndarray) -> float:
    """Entropy rate in bits per step, using 0 log 0 = 0."""
    T = check_stochastic(T, tol=1e-9)
    mu = stationary_distribution(T)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(T > 0, np.log2(np.where(T > 0, T, 1.0)), 0.0)
    return float(-np.sum(mu[:, None] * T * logs))


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


@dataclass
class CombinedChain:
    """Product chain of independent component chains.

    Joint states are tuples of component states; the joint index uses the
    first component as the most significant digit.  Nothing is materialised
    unless :meth:`matrix` is called.
    """

    components: list[np.ndarray]

    def __post_init__(self) -> None:
        self.components = [check_stochastic(c, tol=1e-9) for c in self.components]
        if not self.components:
            raise ChainError("a combined chain needs at least one component")

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.components)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.sizes))

    def states(self) -> list[tuple[int, ...]]:
        return list(itertools.product(*[range(s) for s in self.sizes]))

    def prob(self, s: Sequence[int], s_next: Sequence[int]) -> float:
        return float(np.prod([c[i, j] for c, i, j in zip(self.components, s, s_next)]))

    def stay_prob(self, s: Sequence[int]) -> float:
        return float(np.prod([c[i, i] for c, i in zip(self.components, s)]))

    def return_prob(self, s: Sequence[int], steps: int) -> float:
        """P(X_steps = s | X_0 = s), from component matrix powers."""
        out = 1.0
        for c, i in zip(self.components, s):
            out *= np.linalg.matrix_power(c, steps)[i, i]
        return float(out)

    def stationary(self) -> np.ndarray:
        vec = np.ones(1)
        for c in self.components:
            vec = np.kron(vec, stationary_distribution(c))
        return vec

    def matrix(self) -> np.ndarray:
        if self.k > K_MAX:
            raise ChainError(
                f"{self.k} components exceed the explicit limit of {K_MAX}; use prob()/stay_prob() instead"
            )
        M = np.ones((1, 1))
        for c in self.components:
            M = np.kron(M, c)
        return M


def combine_chains(chains: Sequence[np.ndarray]) -> CombinedChain:
    chain = CombinedChain(list(chains))
    if chain.k > K_MAX:
        raise ChainError(
            f"{chain.k} components exceed the explicit limit of {K_MAX}; evaluate the factored form lazily"
        )
    return chain
