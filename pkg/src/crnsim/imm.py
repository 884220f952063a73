"""Batched two-model (CV / coordinated-turn) IMM Kalman filtering.

All functions operate on a stack of K tracks at once:

* ``x``  (K, 2, 4)   per-model state ``[px, py, vx, vy]``
* ``P``  (K, 2, 4, 4) per-model covariance
* ``mu`` (K, 2)      model probabilities (CV, CT)
* ``Pi`` (K, 2, 2)   model transition matrices (row i -> column j)
"""
from __future__ import annotations

import numpy as np

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
I4 = np.eye(4)
# manoeuvre noise of the turn model relative to the target process noise
CT_ACCEL_SCALE = 10.0


def cv_matrix(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def ct_matrices(omega: np.ndarray, dt: float) -> np.ndarray:
    """Coordinated-turn transition matrices for known turn rates, (K, 4, 4)."""
    w = np.asarray(omega, dtype=float)
    wdt = w * dt
    small = np.abs(wdt) < 1e-9
    safe = np.where(small, 1.0, w)
    s, c = np.sin(wdt), np.cos(wdt)
    a = np.where(small, dt, s / safe)
    b = np.where(small, 0.0, (1.0 - c) / safe)
    F = np.zeros(w.shape + (4, 4))
    F[..., 0, 0] = F[..., 1, 1] = 1.0
    F[..., 0, 2], F[..., 0, 3] = a, -b
    F[..., 1, 2], F[..., 1, 3] = b, a
    F[..., 2, 2], F[..., 2, 3] = c, -s
    F[..., 3, 2], F[..., 3, 3] = s, c
    return F


def white_accel_q(accel_std: float, dt: float) -> np.ndarray:
    q = accel_std**2
    Q = np.zeros((4, 4))
    Q[0, 0] = Q[1, 1] = q * dt**4 / 4
    Q[2, 2] = Q[3, 3] = q * dt**2
    Q[0, 2] = Q[2, 0] = Q[1, 3] = Q[3, 1] = q * dt**3 / 2
    return Q


def mix(x: np.ndarray, P: np.ndarray, mu: np.ndarray, Pi: np.ndarray):
    """IMM interaction step; returns mixed (x0, P0) and predicted model probs."""
    cbar = np.matmul(mu[:, None, :], Pi)[:, 0, :]
    cbar = np.maximum(cbar, 1e-300)
    w = Pi * mu[:, :, None] / cbar[:, None, :]  # w[k, i, j] = mu_{i|j}
    wT = np.swapaxes(w, 1, 2)
    x0 = np.matmul(wT, x)
    d = x[:, :, None, :] - x0[:, None, :, :]  # (K, i, j, 4)
    K = x.shape[0]
    P0 = np.matmul(wT, P.reshape(K, 2, 16)).reshape(K, 2, 4, 4)
    P0 += np.sum(w[..., None, None] * (d[..., :, None] * d[..., None, :]), axis=1)
    return x0, P0, cbar


def predict(x0: np.ndarray, P0: np.ndarray, omega: np.ndarray, dt: float, Q: np.ndarray):
    K = x0.shape[0]
    F = np.empty((K, 2, 4, 4))
    F[:, 0] = cv_matrix(dt)
    F[:, 1] = ct_matrices(omega, dt)
    x = np.matmul(F, x0[..., None])[..., 0]
    P = np.matmul(np.matmul(F, P0), np.swapaxes(F, -1, -2)) + Q
    return x, P


def update(x: np.ndarray, P: np.ndarray, z: np.ndarray, R: np.ndarray):
    """Per-model Kalman update for K tracks with position measurements.

    ``z`` is (K, 2) and ``R`` is (K,) isotropic measurement variance.
    Returns updated (x, P) and per-model likelihoods (K, 2).
    """
    y = z[:, None, :] - x[:, :, :2]
    S = P[:, :, :2, :2] + R[:, None, None, None] * np.eye(2)
    det = S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]
    Sinv = np.empty_like(S)
    Sinv[..., 0, 0] = S[..., 1, 1] / det
    Sinv[..., 1, 1] = S[..., 0, 0] / det
    Sinv[..., 0, 1] = -S[..., 0, 1] / det
    Sinv[..., 1, 0] = -S[..., 1, 0] / det
    G = np.matmul(P[..., :, :2], Sinv)  # (K, 2, 4, 2)
    x_new = x + np.matmul(G, y[..., None])[..., 0]
    IKH = I4 - np.matmul(G, H)
    # Joseph form keeps the covariance symmetric positive semidefinite
    GT = np.swapaxes(G, -1, -2)
    P_new = np.matmul(np.matmul(IKH, P), np.swapaxes(IKH, -1, -2)) + R[:, None, None, None] * np.matmul(G, GT)
    P_new = 0.5 * (P_new + np.swapaxes(P_new, -1, -2))
    m2 = np.matmul(np.matmul(y[..., None, :], Sinv), y[..., None])[..., 0, 0]
    lik = np.exp(-0.5 * m2) / (2.0 * np.pi * np.sqrt(det))
    return x_new, P_new, lik


def update_probs(cbar: np.ndarray, lik: np.ndarray) -> np.ndarray:
    mu = cbar * lik
    tot = mu.sum(axis=1, keepdims=True)
    bad = tot[:, 0] <= 0
    if bad.any():
        mu[bad] = cbar[bad]
        tot[bad] = cbar[bad].sum(axis=1, keepdims=True)
    return mu / tot


def combine(x: np.ndarray, P: np.ndarray, mu: np.ndarray):
    xc = np.matmul(mu[:, None, :], x)[:, 0, :]
    d = x - xc[:, None, :]
    Pc = np.sum(mu[:, :, None, None] * (P + d[..., :, None] * d[..., None, :]), axis=1)
    return xc, Pc


def mahalanobis_sq(xc: np.ndarray, Pc: np.ndarray, R: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Squared innovation distance between K tracks and Z measurements, (K, Z).

    ``R`` holds one isotropic variance per track.
    """
    S = Pc[:, :2, :2] + R[:, None, None] * np.eye(2)
    det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] ** 2
    y = z[None, :, :] - xc[:, None, :2]
    return (S[:, None, 1, 1] * y[..., 0] ** 2 - 2 * S[:, None, 0, 1] * y[..., 0] * y[..., 1] + S[:, None, 0, 0] * y[..., 1] ** 2) / det[:, None]
