"""Covariance functions on cylindrical coordinates.

Three kernel families are provided:

``rbf``
    squared exponential over every input dimension.
``tunnel``
    inputs ``(theta, l)``; a C2 Wendland function of the geodesic angle
    distance times an RBF along ``l``.
``param``
    inputs ``(rho, theta, l)``; RBF in ``rho`` times Wendland in ``theta``
    times RBF in ``l``.

The torch implementations (``correlation``) are what the variational
code differentiates through.  The numpy-facing helpers below them are
thin wrappers for direct use and testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

TWO_PI = 2.0 * math.pi
KERNEL_KINDS = ("rbf", "tunnel", "param")
DEFAULT_JITTER = 1e-6
MAX_JITTER = 1e-2

# index of the angular input column per kernel kind (None: no angle)
ANGULAR_DIM = {"rbf": None, "tunnel": 0, "param": 1}


@dataclass
class KernelParams:
    """Hyper-parameters shared by all kernel families.

    ``variance`` scales the whole tensor product.  ``lengthscales`` hold one
    entry per non-angular input dimension, in input order.
    """

    variance: float = 1.0
    lengthscales: tuple = (1.0,)
    wendland_c: float = math.pi
    wendland_tau: float = 4.0

    def __post_init__(self):
        self.lengthscales = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        self.variance = float(self.variance)
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if not all(v > 0 for v in self.lengthscales):
            raise ValueError(f"lengthscales must be positive, got {self.lengthscales}")
        if not 0 < self.wendland_c <= math.pi + 1e-12:
            raise ValueError(f"wendland_c must lie in (0, pi], got {self.wendland_c}")
        if self.wendland_tau < 4:
            raise ValueError(f"wendland_tau must be >= 4, got {self.wendland_tau}")

    def to_dict(self):
        return {
            "variance": self.variance,
            "lengthscales": list(self.lengthscales),
            "wendland_c": self.wendland_c,
            "wendland_tau": self.wendland_tau,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def n_lengthscales(kind: str, dim: int) -> int:
    return dim if ANGULAR_DIM[kind] is None else dim - 1


# ---------------------------------------------------------------------------
# torch core
# ---------------------------------------------------------------------------


def wrap_angle_t(theta):
    return torch.remainder(theta + math.pi, TWO_PI) - math.pi


def geodesic_t(a, b):
    return torch.abs(wrap_angle_t(a - b))


def wendland_t(t, c, tau=4.0):
    r = t / c
    return (1.0 + tau * r) * torch.clamp(1.0 - r, min=0.0) ** tau


def _sqdist(a, b, ls):
    a = a / ls
    b = b / ls
    return (a[:, None, :] - b[None, :, :]).pow(2).sum(-1)


def correlation(kind, a, b, lengthscales, c=math.pi, tau=4.0):
    """Unit-variance kernel matrix between rows of ``a`` and ``b`` (torch)."""
    if kind == "rbf":
        return torch.exp(-0.5 * _sqdist(a, b, lengthscales))
    j = ANGULAR_DIM[kind]
    keep = [i for i in range(a.shape[1]) if i != j]
    ang = wendland_t(geodesic_t(a[:, None, j], b[None, :, j]), c, tau)
    return ang * torch.exp(-0.5 * _sqdist(a[:, keep], b[:, keep], lengthscales))


# ---------------------------------------------------------------------------
# numpy-facing helpers
# ---------------------------------------------------------------------------


def _finite(*arrays):
    for x in arrays:
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite angle or input")


def wrap_angle(theta):
    """Wrap angles into ``[-pi, pi)``."""
    theta = np.asarray(theta, dtype=float)
    return np.mod(theta + math.pi, TWO_PI) - math.pi


def geodesic_distance(theta_a, theta_b):
    """Shortest arc between two angles, in ``[0, pi]``.

    Arbitrary real inputs are wrapped first, so this equals
    ``min(|d|, 2*pi - |d|)`` for the wrapped difference ``d``.
    """
    a = np.asarray(theta_a, dtype=float)
    b = np.asarray(theta_b, dtype=float)
    _finite(a, b)
    d = np.abs(wrap_angle(wrap_angle(a) - wrap_angle(b)))
    return d if d.ndim else float(d)


def geodesic_distance_derivative(theta_a, theta_b):
    """Derivative of :func:`geodesic_distance` with respect to ``theta_a``.

    Evaluates ``-sign(d) * sign(|d| - pi)`` with ``d`` the raw difference of
    the wrapped angles, so the result is -1, 0 or +1.  Kinks (``|d|`` equal
    to 0 or pi) return 0.
    """
    a = np.asarray(theta_a, dtype=float)
    b = np.asarray(theta_b, dtype=float)
    _finite(a, b)
    d = wrap_angle(a) - wrap_angle(b)
    out = -np.sign(d) * np.sign(np.abs(d) - math.pi)
    out = out + 0.0  # normalise -0.0
    return out if out.ndim else float(out)


def wendland_c2(t, c=math.pi, tau=4.0):
    """C2 Wendland function ``(1 + tau t/c) (1 - t/c)_+^tau``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("Wendland distance must be non-negative")
    if not 0 < c <= math.pi + 1e-12:
        raise ValueError(f"support c must lie in (0, pi], got {c}")
    r = t / c
    out = (1.0 + tau * r) * np.clip(1.0 - r, 0.0, None) ** tau
    return out if out.ndim else float(out)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(1, -1) if x.ndim <= 1 else x


def rbf(x, y, params: KernelParams):
    """Squared-exponential kernel between two points (or stacks of points)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    ls = np.broadcast_to(np.asarray(params.lengthscales), x.shape[-1:])
    r2 = np.sum(((x - y) / ls) ** 2, axis=-1)
    out = params.variance * np.exp(-0.5 * r2)
    return out if np.ndim(out) else float(out)


def tunnel_kernel(u, v, params: KernelParams):
    """Angular Wendland times longitudinal RBF, inputs ``(theta, l)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    ka = wendland_c2(geodesic_distance(u[..., 0], v[..., 0]), params.wendland_c, params.wendland_tau)
    kl = np.exp(-0.5 * ((u[..., 1] - v[..., 1]) / params.lengthscales[0]) ** 2)
    out = params.variance * ka * kl
    return out if np.ndim(out) else float(out)


def param_kernel(u, v, params: KernelParams):
    """Radius RBF times angular Wendland times longitudinal RBF, inputs ``(rho, theta, l)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    ls_r, ls_l = params.lengthscales[0], params.lengthscales[1]
    kr = np.exp(-0.5 * ((u[..., 0] - v[..., 0]) / ls_r) ** 2)
    ka = wendland_c2(geodesic_distance(u[..., 1], v[..., 1]), params.wendland_c, params.wendland_tau)
    kl = np.exp(-0.5 * ((u[..., 2] - v[..., 2]) / ls_l) ** 2)
    out = params.variance * kr * ka * kl
    return out if np.ndim(out) else float(out)


def gram(points_a, points_b, kind: str, params: KernelParams, jitter: float = 0.0):
    """Kernel matrix between two point sets.

    When ``points_b`` is ``None`` the self-gram of ``points_a`` is returned
    with ``jitter * variance`` added to the diagonal.
    """
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    a = _as_points(points_a)
    same = points_b is None
    b = a if same else _as_points(points_b)
    with torch.no_grad():
        k = correlation(
            kind,
            torch.from_numpy(a),
            torch.from_numpy(b),
            torch.tensor(params.lengthscales, dtype=torch.float64),
            params.wendland_c,
            params.wendland_tau,
        ).numpy()
    k = params.variance * k
    if same and jitter:
        k = k + jitter * params.variance * np.eye(len(a))
    return k
