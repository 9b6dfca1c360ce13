"""Synthetic tunnel structures with known cross-section densities.

``S1``  Gaussian cross-section on a bent pole ``(2 l^2, 2 l^2)`` with axis
        stds ``(2 - l, 2 + l)``.
``S2``  twisted five-petal rose, uniform inside
        ``r = alpha (3 + cos(5 (theta + pi phi / 5)))`` with
        ``phi = 2 pi l / 5`` and ``alpha = 2 - |l|``.
``S3``  equal mixture of ``N(0, diag(9, 1))`` and ``N(0, diag(1, 9))``.

Every structure lives on ``l`` in ``[-1, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STRUCTURES = ("S1", "S2", "S3")
EVAL_RANGES = {"S1": (-10.0, 15.0), "S2": (-10.0, 10.0), "S3": (-10.0, 10.0)}


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class StructureSpec:
    kind: str

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in STRUCTURES:
            raise ValueError(f"unknown structure {self.kind!r}; expected one of {STRUCTURES}")
        object.__setattr__(self, "kind", kind)

    def pole(self, l):
        l = np.asarray(l, dtype=float)
        if self.kind == "S1":
            p = 2.0 * l**2
            return p, p.copy()
        return np.zeros_like(l), np.zeros_like(l)

    def sigmas(self, l):
        """Axis standard deviations ``(sigma_a, sigma_b)`` of the Gaussian structures."""
        l = np.asarray(l, dtype=float)
        if self.kind == "S1":
            return 2.0 - l, 2.0 + l
        if self.kind == "S3":
            return np.full_like(l, 3.0), np.full_like(l, 1.0)
        raise ValueError("S2 is not Gaussian")

    @staticmethod
    def alpha(l):
        return 2.0 - np.abs(l)

    @staticmethod
    def phi(l):
        return 2.0 * math.pi * np.asarray(l, dtype=float) / 5.0

    def rose_radius(self, theta, l):
        return self.alpha(l) * (3.0 + np.cos(5.0 * (theta + math.pi * self.phi(l) / 5.0)))

    def rose_area(self, l):
        """Closed form of ``0.5 * integral r^2 dtheta`` = ``19 pi alpha^2 / 2``."""
        return 9.5 * math.pi * self.alpha(l) ** 2

    @property
    def eval_range(self):
        return EVAL_RANGES[self.kind]

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "S1":
            d.update(pole="(2l^2, 2l^2)", sigma_a="2 - l", sigma_b="2 + l")
        elif self.kind == "S2":
            d.update(pole="(0, 0)", radius="alpha (3 + cos(5 (theta + pi phi / 5)))",
                     phi="2 pi l / 5", alpha="2 - |l|", interior="uniform")
        else:
            d.update(pole="(0, 0)", components="diag(9,1), diag(1,9)", weights=[0.5, 0.5])
        return d


def sample_structure(spec: StructureSpec, n: int, seed: int = 0, l=None):
    """Draw ``n`` points ``(x, y, l)``.

    ``l`` is uniform on ``[-1, 1]`` unless a fixed plane is given.  S2 points
    are uniform over the rose, obtained by rejection from the enclosing disk
    of radius ``4 alpha``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _rng(seed)
    ll = rng.uniform(-1.0, 1.0, n) if l is None else np.full(n, float(l))
    if spec.kind == "S2":
        x = np.empty(n)
        y = np.empty(n)
        todo = np.arange(n)
        while len(todo):
            lt = ll[todo]
            rmax = 4.0 * spec.alpha(lt)
            r = rmax * np.sqrt(rng.uniform(size=len(todo)))
            th = rng.uniform(-math.pi, math.pi, len(todo))
            ok = r <= spec.rose_radius(th, lt)
            x[todo[ok]] = r[ok] * np.cos(th[ok])
            y[todo[ok]] = r[ok] * np.sin(th[ok])
            todo = todo[~ok]
        return np.column_stack([x, y, ll])
    sa, sb = spec.sigmas(ll)
    z = rng.standard_normal((n, 2))
    if spec.kind == "S3":
        swap = rng.uniform(size=n) < 0.5
        sa, sb = np.where(swap, sb, sa), np.where(swap, sa, sb)
    xp, yp = spec.pole(ll)
    return np.column_stack([xp + sa * z[:, 0], yp + sb * z[:, 1], ll])


def _normal2(x, y, sx, sy):
    return np.exp(-0.5 * ((x / sx) ** 2 + (y / sy) ** 2)) / (2.0 * math.pi * sx * sy)


def true_pdf(spec: StructureSpec, l, x, y):
    """Ground-truth cross-section density at plane ``l``."""
    if not -1.0 <= l <= 1.0:
        raise ValueError("l must lie in [-1, 1]")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xp, yp = spec.pole(l)
    dx, dy = x - xp, y - yp
    if spec.kind == "S1":
        sa, sb = spec.sigmas(l)
        return _normal2(dx, dy, sa, sb)
    if spec.kind == "S3":
        return 0.5 * _normal2(dx, dy, 3.0, 1.0) + 0.5 * _normal2(dx, dy, 1.0, 3.0)
    r = np.hypot(dx, dy)
    inside = r <= spec.rose_radius(np.arctan2(dy, dx), l)
    return np.where(inside, 1.0 / spec.rose_area(l), 0.0)
