"""Per-plane Gaussian-mixture density baselines.

``fit_gmm_em`` is a full-covariance EM fit with k-means++ starts.
``fit_mgmm`` clusters by k-means and takes each cluster's covariance from
the SVD of its centred members, with no joint refinement afterwards.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

COV_FLOOR = 1e-6
MIXTURE_VERSION = 1


@dataclass
class Mixture2D:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik_trace: list | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.means = np.asarray(self.means, dtype=float).reshape(-1, 2)
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(-1, 2, 2)
        if not len(self.weights) == len(self.means) == len(self.covariances):
            raise ValueError("mixture parts have inconsistent sizes")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("weights must lie on the simplex")
        self.weights = self.weights / self.weights.sum()

    @property
    def size(self):
        return len(self.weights)

    def log_pdf(self, points):
        return logsumexp(_component_logpdf(points, self), axis=1)

    def log_likelihood(self, points):
        return float(self.log_pdf(points).sum())

    def to_dict(self):
        return {
            "format_version": MIXTURE_VERSION,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != MIXTURE_VERSION:
            raise ValueError(f"unsupported mixture format version {d.get('format_version')!r}")
        return cls(d["weights"], d["means"], d["covariances"])


def _component_logpdf(points, mix: Mixture2D):
    """``log w_r + log N(x; mu_r, C_r)`` for every point and component, shape ``(n, R)``."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    C = mix.covariances
    a, b, c = C[:, 0, 0], C[:, 0, 1], C[:, 1, 1]
    det = a * c - b * b
    if np.any(det <= 0) or np.any(a <= 0):
        raise np.linalg.LinAlgError("mixture covariance is not positive definite")
    dx = X[:, 0:1] - mix.means[:, 0]
    dy = X[:, 1:2] - mix.means[:, 1]
    q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return np.log(mix.weights) - math.log(2 * math.pi) - 0.5 * np.log(det) - 0.5 * q


def mixture_pdf(mix: Mixture2D, x, y):
    """Sum of weighted bivariate normal densities at ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast(x, y).shape
    pts = np.column_stack([np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()])
    return np.exp(mix.log_pdf(pts)).reshape(shape)


def logsumexp(a, axis=1):
    m = a.max(axis=axis, keepdims=True)
    return np.log(np.exp(a - m).sum(axis=axis)) + np.squeeze(m, axis=axis)


def _floor_cov(C):
    C = 0.5 * (C + C.T)
    # closed-form eigenvalues of a symmetric 2x2 matrix
    a, b, c = C[0, 0], C[0, 1], C[1, 1]
    half = 0.5 * math.hypot(a - c, 2.0 * b)
    if 0.5 * (a + c) - half >= COV_FLOOR:
        return C
    w, V = np.linalg.eigh(C)
    return (V * np.maximum(w, COV_FLOOR)) @ V.T


def kmeans_pp(X, R, rng):
    """k-means++ seeding."""
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, R):
        tot = d2.sum()
        idx = rng.integers(n) if tot <= 0 else rng.choice(n, p=d2 / tot)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _assign(X, C):
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)
    return np.argmin(d2, axis=1)


def lloyd(X, centers, rng, max_iter=300, tol=1e-10):
    """Lloyd iterations; an empty cluster is re-seeded at the worst-fit point."""
    C = centers.copy()
    for _ in range(max_iter):
        lab = _assign(X, C)
        new = C.copy()
        for r in range(len(C)):
            mask = lab == r
            if mask.any():
                new[r] = X[mask].mean(axis=0)
            else:
                d2 = ((X - C[lab]) ** 2).sum(1)
                new[r] = X[np.argmax(d2)]
        shift = np.max(np.abs(new - C))
        C = new
        if shift < tol:
            break
    return C, _assign(X, C)


def _check_points(points, R):
    X = np.asarray(points, dtype=float).reshape(-1, 2)
    if R < 1:
        raise ValueError("R must be at least 1")
    if len(X) < R:
        raise ValueError(f"need at least R={R} points, got {len(X)}")
    return X


def _em_run(X, R, rng, max_iter, tol):
    n = len(X)
    centers = kmeans_pp(X, R, rng)
    lab = _assign(X, centers)
    cov0 = _floor_cov(np.cov(X.T, bias=True))
    center = X.mean(axis=0)
    Xc = X - center
    means = centers.copy()
    covs = np.array([cov0.copy() for _ in range(R)])
    weights = np.array([max((lab == r).mean(), 1.0 / n) for r in range(R)])
    weights /= weights.sum()
    reseeded = set()
    trace = []
    prev = -np.inf
    for _ in range(max_iter):
        mix = Mixture2D(weights, means, covs)
        lp = _component_logpdf(X, mix)
        norm = logsumexp(lp, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        if ll - prev < tol:
            break
        prev = ll
        resp = np.exp(lp - norm[:, None])
        nk = resp.sum(axis=0)
        for r in np.flatnonzero(nk < 1e-8 * n):
            if r not in reseeded:
                # re-seed an empty component once, then fall back to the floor
                reseeded.add(r)
                resp[:, r] = 0.0
                resp[rng.integers(n), r] = 1.0
                nk[r] = 1.0
            else:
                log.warning("mixture component %d collapsed; regularising", r)
                nk[r] = max(nk[r], 1e-12)
        means = (resp.T @ X) / nk[:, None]
        # weighted second moments of the centred data, minus the outer means
        sxx = resp.T @ (Xc[:, 0] * Xc[:, 0]) / nk
        sxy = resp.T @ (Xc[:, 0] * Xc[:, 1]) / nk
        syy = resp.T @ (Xc[:, 1] * Xc[:, 1]) / nk
        mc = means - center
        covs = np.empty((R, 2, 2))
        covs[:, 0, 0] = sxx - mc[:, 0] ** 2
        covs[:, 0, 1] = covs[:, 1, 0] = sxy - mc[:, 0] * mc[:, 1]
        covs[:, 1, 1] = syy - mc[:, 1] ** 2
        covs = np.array([_floor_cov(C) for C in covs])
        weights = nk / nk.sum()
    return Mixture2D(weights, means, covs, trace)


def fit_gmm_em(points, R, seed=0, restarts=5, max_iter=500, tol=1e-6):
    """Full-covariance EM, best of ``restarts`` k-means++ starts.

    Stops when the log-likelihood gain drops below ``tol``.
    """
    X = _check_points(points, R)
    rng = np.random.Generator(np.random.Philox(seed))
    best = None
    for _ in range(restarts):
        mix = _em_run(X, R, rng, max_iter, tol)
        if best is None or mix.loglik_trace[-1] > best.loglik_trace[-1]:
            best = mix
    return best


def fit_mgmm(points, R, seed=0):
    """k-means++ and Lloyd centroids; per-cluster covariance from an SVD.

    Each covariance is ``V diag(s^2 / n_r) V^T`` from the SVD of the centred
    cluster members, i.e. the maximum-likelihood covariance of the cluster,
    so ``R = 1`` reproduces the sample moments.
    """
    X = _check_points(points, R)
    rng = np.random.Generator(np.random.Philox(seed))
    C, lab = lloyd(X, kmeans_pp(X, R, rng), rng)
    weights, means, covs = [], [], []
    for r in range(R):
        members = X[lab == r]
        if len(members) == 0:
            continue
        mu = members.mean(axis=0)
        _, s, Vt = np.linalg.svd(members - mu, full_matrices=False)
        covs.append(_floor_cov((Vt.T * (s**2 / len(members))) @ Vt))
        means.append(mu)
        weights.append(len(members) / len(X))
    mix = Mixture2D(np.array(weights), np.array(means), np.array(covs))
    mix.loglik_trace = [mix.log_likelihood(X)]
    return mix
