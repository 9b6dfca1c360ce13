"""Linear-Gaussian state space: filter, RTS smoother and EM.

    x_0 ~ N(mu0, Sigma0)
    x_{t+1} = A_t x_t + b + e1,   e1 ~ N(0, Q)
    y_t     = C x_t + d + e2,     e2 ~ N(0, R)

EM re-estimates ``Q``, ``R``, ``mu0`` and ``Sigma0``; transition and
observation matrices stay fixed by the kinematic model.  ``A_t`` may vary
per step so irregular sampling is handled exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

COV_FLOOR = 1e-9


@dataclass
class KalmanParams:
    A: np.ndarray  # (T-1, n, n)
    C: np.ndarray  # (p, n)
    Q: np.ndarray
    R: np.ndarray
    b: np.ndarray
    d: np.ndarray
    mu0: np.ndarray
    Sigma0: np.ndarray


@dataclass
class SmootherResult:
    means: np.ndarray  # (T, n)
    covs: np.ndarray  # (T, n, n)
    lag_covs: np.ndarray  # (T-1, n, n): Cov(x_{t+1}, x_t | y)
    loglik: float


def constant_velocity(times):
    """Per-step transition matrices of a constant-velocity model."""
    dt = np.diff(np.asarray(times, dtype=float))
    A = np.zeros((len(dt), 2, 2))
    A[:, 0, 0] = 1.0
    A[:, 1, 1] = 1.0
    A[:, 0, 1] = dt
    return A


def _floor(S, name, hits):
    # eigenvalue clipping is the exact M-step optimum under S >= floor * I
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w.min() < COV_FLOOR:
        hits.add(name)
        S = (V * np.maximum(w, COV_FLOOR)) @ V.T
        S = 0.5 * (S + S.T)
    return S


def smooth(y, params: KalmanParams) -> SmootherResult:
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    T, p = y.shape
    n = params.mu0.shape[0]
    A, C, Q, R = params.A, params.C, params.Q, params.R
    mp = np.empty((T, n))
    Pp = np.empty((T, n, n))
    mf = np.empty((T, n))
    Pf = np.empty((T, n, n))
    ll = 0.0
    I = np.eye(n)
    for t in range(T):
        if t == 0:
            mp[t], Pp[t] = params.mu0, params.Sigma0
        else:
            mp[t] = A[t - 1] @ mf[t - 1] + params.b
            Pp[t] = A[t - 1] @ Pf[t - 1] @ A[t - 1].T + Q
        S = C @ Pp[t] @ C.T + R
        e = y[t] - C @ mp[t] - params.d
        Sinv = np.linalg.inv(S)
        K = Pp[t] @ C.T @ Sinv
        _, logdet = np.linalg.slogdet(S)
        ll += -0.5 * (p * math.log(2 * math.pi) + logdet + e @ Sinv @ e)
        mf[t] = mp[t] + K @ e
        IKC = I - K @ C
        Pf[t] = IKC @ Pp[t] @ IKC.T + K @ R @ K.T
    ms = mf.copy()
    Ps = Pf.copy()
    lag = np.empty((max(T - 1, 0), n, n))
    for t in range(T - 2, -1, -1):
        J = Pf[t] @ A[t].T @ np.linalg.inv(Pp[t + 1])
        ms[t] = mf[t] + J @ (ms[t + 1] - mp[t + 1])
        Ps[t] = Pf[t] + J @ (Ps[t + 1] - Pp[t + 1]) @ J.T
        lag[t] = Ps[t + 1] @ J.T
    return SmootherResult(ms, Ps, lag, ll)


def _m_step(y, params: KalmanParams, sm: SmootherResult, hits):
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    T = len(y)
    m, P, lag = sm.means, sm.covs, sm.lag_covs
    A, C = params.A, params.C
    Q = np.zeros_like(params.Q)
    for t in range(T - 1):
        r = m[t + 1] - A[t] @ m[t] - params.b
        Q += (
            np.outer(r, r)
            + P[t + 1]
            - A[t] @ lag[t].T
            - lag[t] @ A[t].T
            + A[t] @ P[t] @ A[t].T
        )
    Q /= max(T - 1, 1)
    R = np.zeros_like(params.R)
    for t in range(T):
        r = y[t] - C @ m[t] - params.d
        R += np.outer(r, r) + C @ P[t] @ C.T
    R /= T
    return KalmanParams(
        A, C, _floor(Q, "transition", hits), _floor(R, "observation", hits), params.b, params.d,
        m[0].copy(), _floor(P[0], "initial", hits),
    )


def default_params(times, y):
    """Constant-velocity parameters initialised from the data's own scale."""
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    dt = np.median(np.diff(times)) if len(times) > 1 else 1.0
    d2 = np.diff(y, 2) if len(y) > 2 else np.zeros(1)
    scale = max(float(np.var(d2)), 1e-6)
    v0 = (y[1] - y[0]) / (times[1] - times[0]) if len(y) > 1 else 0.0
    return KalmanParams(
        A=constant_velocity(times),
        C=np.array([[1.0, 0.0]]),
        # start with little process noise; EM grows it where the data demand
        Q=np.diag([1e-5 * scale, 1e-5 * scale / dt**2]),
        R=np.array([[scale / 6.0]]),
        b=np.zeros(2),
        d=np.zeros(1),
        mu0=np.array([y[0], v0]),
        Sigma0=np.diag([max(scale, 1.0), max(scale / dt**2, 1.0)]),
    )


def kalman_em(observations, times=None, n_iterations=20, params: KalmanParams | None = None):
    """Run EM and return ``(params, smoother_result, loglik_trace)``.

    ``loglik_trace[k]`` is the observed-data log-likelihood under the
    parameters of iteration ``k``; EM keeps it non-decreasing.
    """
    y = np.asarray(observations, dtype=float)
    if len(y) < 10:
        raise ValueError("Kalman EM needs at least 10 observations")
    times = np.arange(len(y), dtype=float) if times is None else np.asarray(times, dtype=float)
    params = params or default_params(times, y)
    trace = []
    hits = set()
    for _ in range(n_iterations):
        sm = smooth(y, params)
        trace.append(sm.loglik)
        params = _m_step(y, params, sm, hits)
    sm = smooth(y, params)
    trace.append(sm.loglik)
    if hits:
        log.warning("covariance floor %.0e applied to: %s", COV_FLOOR, ", ".join(sorted(hits)))
    return params, sm, trace


def smoothed_velocity(times, positions, n_iterations=20):
    """Smoothed first derivative of a scalar series under a constant-velocity model."""
    _, sm, _ = kalman_em(positions, times, n_iterations)
    return sm.means[:, 1]
