"""Scalers, pole fitting and the cylindrical (diametral) transform.

All downstream models work in *scaled* units: ``x`` and ``y`` standardised
per axis and ``l`` min-max mapped onto ``[-1, 1]``.  The pole is a pair of
1-D sparse GPs ``x_p(l)``, ``y_p(l)`` fitted in those units, and cylindrical
coordinates are taken relative to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import svgp
from ..svgp import SvgpState, TrainConfig

SCALER_VERSION = 1


@dataclass(frozen=True)
class Scalers:
    """Standard scaler on ``(x, y)`` and min-max scaler of ``l`` onto ``[-1, 1]``."""

    mean: tuple
    std: tuple
    l_min: float
    l_max: float

    def __post_init__(self):
        if not all(s > 0 for s in self.std):
            raise ValueError("scaler std must be positive")
        if not self.l_max > self.l_min:
            raise ValueError("l_max must exceed l_min")

    @classmethod
    def fit(cls, points):
        P = np.asarray(points, dtype=float)
        # sorted columns make the floating-point sums independent of input order
        XY = np.sort(P[:, :2], axis=0)
        std = XY.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(
            tuple(XY.mean(axis=0).tolist()),
            tuple(std.tolist()),
            float(P[:, 2].min()),
            float(P[:, 2].max()),
        )

    @property
    def jacobian(self):
        """Area factor between structure units and scaled units."""
        return self.std[0] * self.std[1]

    def scale_l(self, l):
        l = np.asarray(l, dtype=float)
        return 2.0 * (l - self.l_min) / (self.l_max - self.l_min) - 1.0

    def unscale_l(self, ls):
        ls = np.asarray(ls, dtype=float)
        return self.l_min + 0.5 * (ls + 1.0) * (self.l_max - self.l_min)

    def transform(self, points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty_like(P)
        out[:, 0] = (P[:, 0] - self.mean[0]) / self.std[0]
        out[:, 1] = (P[:, 1] - self.mean[1]) / self.std[1]
        out[:, 2] = self.scale_l(P[:, 2])
        return out

    def inverse(self, scaled):
        S = np.atleast_2d(np.asarray(scaled, dtype=float))
        out = np.empty_like(S)
        out[:, 0] = S[:, 0] * self.std[0] + self.mean[0]
        out[:, 1] = S[:, 1] * self.std[1] + self.mean[1]
        out[:, 2] = self.unscale_l(S[:, 2])
        return out

    def to_dict(self):
        return {
            "format_version": SCALER_VERSION,
            "xy_mean": list(self.mean),
            "xy_std": list(self.std),
            "l_min": self.l_min,
            "l_max": self.l_max,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != SCALER_VERSION:
            raise ValueError(f"unsupported scaler format version {d.get('format_version')!r}")
        return cls(tuple(d["xy_mean"]), tuple(d["xy_std"]), float(d["l_min"]), float(d["l_max"]))


@dataclass
class PoleModel:
    """Two independent 1-D regressions ``x_p(l)`` and ``y_p(l)`` in scaled units."""

    x: SvgpState
    y: SvgpState

    def __call__(self, l_scaled):
        q = np.asarray(l_scaled, dtype=float).reshape(-1, 1)
        xp, _ = svgp.predict(q, self.x, include_noise=False)
        yp, _ = svgp.predict(q, self.y, include_noise=False)
        return xp, yp

    def to_dict(self):
        return {"format_version": SCALER_VERSION, "x": self.x.to_dict(), "y": self.y.to_dict()}

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != SCALER_VERSION:
            raise ValueError(f"unsupported pole format version {d.get('format_version')!r}")
        return cls(SvgpState.from_dict(d["x"]), SvgpState.from_dict(d["y"]))


@dataclass
class PoleConfig:
    num_inducing: int = 10
    batch_size: int = 400
    learning_rate: float = 1e-2
    steps: int = 1500
    seed: int = 0


def fit_pole(scaled_points, config: PoleConfig | None = None) -> PoleModel:
    """Fit ``x_p(l)`` and ``y_p(l)`` on points already in scaled units.

    Use ``num_inducing=10`` for synthetic clouds and 100 for track data.
    """
    cfg = config or PoleConfig()
    S = np.asarray(scaled_points, dtype=float)
    if len(S) < 2:
        raise ValueError("pole fitting needs at least two points")
    order = np.lexsort((S[:, 1], S[:, 0], S[:, 2]))
    S = S[order]
    l = S[:, 2:3]
    models = []
    for k, col in enumerate((0, 1)):
        tc = TrainConfig(
            num_inducing=min(cfg.num_inducing, len(S)),
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            steps=cfg.steps,
            seed=cfg.seed + k,
        )
        models.append(svgp.train(l, S[:, col], tc, kernel="rbf", noise="constant"))
    return PoleModel(*models)


@dataclass
class CylindricalCloud:
    """Points ``(rho, theta, l)`` in canonical diametral form.

    ``theta`` lies in ``[0, pi)`` and ``rho`` is signed: negative values sit
    on the antipodal half-plane.  ``l`` is in scaled units.
    """

    rho: np.ndarray
    theta: np.ndarray
    l: np.ndarray
    source_ids: np.ndarray | None = None
    scalers: Scalers | None = field(default=None, repr=False)
    pole: PoleModel | None = field(default=None, repr=False)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float).ravel()
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        self.l = np.asarray(self.l, dtype=float).ravel()
        if not len(self.rho) == len(self.theta) == len(self.l):
            raise ValueError("rho, theta and l must have equal length")
        if self.source_ids is not None:
            self.source_ids = np.asarray(self.source_ids)

    def __len__(self):
        return len(self.rho)

    @property
    def inputs(self):
        return np.column_stack([self.theta, self.l])

    def full_circle(self):
        """``(|rho|, theta_full, l)`` with ``theta_full`` in ``[-pi, pi)``."""
        return full_circle(self.rho, self.theta, self.l)


def canonical_polar(dx, dy):
    """Signed diametral radius and canonical angle in ``[0, pi)``."""
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    r = np.hypot(dx, dy)
    t = np.mod(np.arctan2(dy, dx), 2.0 * math.pi)
    neg = t >= math.pi
    theta = np.where(neg, t - math.pi, t)
    rho = np.where(neg, -r, r)
    wrap = theta >= math.pi
    theta = np.where(wrap, theta - math.pi, theta)
    rho = np.where(wrap, -rho, rho)
    return rho, theta


def full_circle(rho, theta, l):
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t = np.where(rho < 0, theta - math.pi, theta)
    t = np.mod(t + math.pi, 2.0 * math.pi) - math.pi
    return np.column_stack([np.abs(rho), t, np.asarray(l, dtype=float)])


def to_cylindrical(points, pole, scalers: Scalers, source_ids=None, scaled=False) -> CylindricalCloud:
    """Map structure-unit points ``(x, y, l)`` to a :class:`CylindricalCloud`.

    ``pole`` is any callable returning ``(x_p, y_p)`` for scaled ``l``.  Pass
    ``scaled=True`` when the points are already in scaled units.
    """
    S = np.atleast_2d(np.asarray(points, dtype=float))
    if not scaled:
        S = scalers.transform(S)
    xp, yp = pole(S[:, 2])
    rho, theta = canonical_polar(S[:, 0] - xp, S[:, 1] - yp)
    return CylindricalCloud(rho, theta, S[:, 2], source_ids, scalers, pole)


def from_cylindrical(cloud: CylindricalCloud, pole=None, scalers: Scalers | None = None, scaled=False):
    """Inverse of :func:`to_cylindrical`; returns ``(n, 3)`` points."""
    pole = pole or cloud.pole
    scalers = scalers or cloud.scalers
    xp, yp = pole(cloud.l)
    S = np.column_stack([cloud.rho * np.cos(cloud.theta) + xp, cloud.rho * np.sin(cloud.theta) + yp, cloud.l])
    return S if scaled else scalers.inverse(S)
