"""Grid RMSE against ground-truth densities and Z-score conformance scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import baselines, synth, tgp
from .preprocess.transforms import canonical_polar, full_circle
from .trajectory import Trajectory

PLANES = tuple(round(-0.9 + 0.2 * k, 10) for k in range(10))
GRID_STEP = 0.2
SLAB_HALF_WIDTH = 0.05
R_LADDER = (1, 2, 4, 8, 16)
METHODS = ("GMM", "mGMM", "TGP")
CONFORMANCE_SCHEMA = "tunnelgp.conformance/1"
REPORT_VERSION = 1
CHANNEL_KEYS = {"S_x": "sx", "S_y": "sy", "S_h": "sh"}


class DensityError(ValueError):
    """An estimated density produced a non-finite value."""


@dataclass
class RmseReport:
    structure: str
    method: str
    R: int
    per_plane_rmse: list
    aggregate_rmse: float
    normalization_integral: list
    planes: list = field(default_factory=lambda: list(PLANES))
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "format_version": REPORT_VERSION,
            "structure": self.structure,
            "method": self.method,
            "R": self.R,
            "planes": [float(p) for p in self.planes],
            "per_plane_rmse": [float(v) for v in self.per_plane_rmse],
            "aggregate_rmse": float(self.aggregate_rmse),
            "normalization_integral": [float(v) for v in self.normalization_integral],
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != REPORT_VERSION:
            raise ValueError(f"unsupported report format version {d.get('format_version')!r}")
        return cls(d["structure"], d["method"], d["R"], d["per_plane_rmse"], d["aggregate_rmse"],
                   d["normalization_integral"], d["planes"], d.get("notes", {}))


def eval_grid(spec: synth.StructureSpec, step=GRID_STEP):
    xs = tgp.grid_axis(spec.eval_range, step)
    return np.meshgrid(xs, xs)


def rmse_pdf(estimated_pdf, spec: synth.StructureSpec, method="TGP", R=0, planes=PLANES, step=GRID_STEP) -> RmseReport:
    """RMSE of ``estimated_pdf(l, X, Y)`` against the true density.

    The aggregate pools every grid cell of every plane.  The Riemann sum of
    each estimated plane is reported alongside.
    """
    X, Y = eval_grid(spec, step)
    sq_sum = 0.0
    count = 0
    per_plane, integrals = [], []
    for l in planes:
        est = np.asarray(estimated_pdf(l, X, Y), dtype=float)
        if est.shape != X.shape:
            raise DensityError(f"density at plane l={l} has shape {est.shape}, expected {X.shape}")
        bad = np.argwhere(~np.isfinite(est))
        if len(bad):
            i, j = bad[0]
            raise DensityError(
                f"non-finite density at plane l={l}, cell ({i}, {j}) = (x={X[i, j]:g}, y={Y[i, j]:g})"
            )
        d2 = (est - synth.true_pdf(spec, l, X, Y)) ** 2
        per_plane.append(math.sqrt(d2.mean()))
        integrals.append(float(est.sum() * step * step))
        sq_sum += float(d2.sum())
        count += d2.size
    return RmseReport(spec.kind, method, R, per_plane, math.sqrt(sq_sum / count), integrals, list(planes))


def plane_points(points, l, half_width=SLAB_HALF_WIDTH):
    P = np.asarray(points, dtype=float)
    return P[np.abs(P[:, 2] - l) <= half_width, :2]


def mixture_estimator(points, R, method="GMM", seed=0, planes=PLANES):
    """Fit one mixture per plane slab and return an ``(l, X, Y) -> density`` callable."""
    fit = {"GMM": baselines.fit_gmm_em, "mGMM": baselines.fit_mgmm}[method]
    mixes = {l: fit(plane_points(points, l), R, seed=seed + k) for k, l in enumerate(planes)}

    def pdf(l, X, Y):
        return baselines.mixture_pdf(mixes[l], X, Y)

    pdf.mixtures = mixes
    return pdf


def tgp_estimator(model: tgp.TunnelModel, step=GRID_STEP):
    def pdf(l, X, Y):
        return tgp.pdf_at_plane(model, l, X, Y, rho_floor=step / 2.0)

    return pdf


def z_score(value, mu, sigma):
    """Signed standard score ``(value - mu) / sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be positive")
    out = (np.asarray(value, dtype=float) - mu) / sigma
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# conformance
# ---------------------------------------------------------------------------


@dataclass
class ConformanceRecord:
    index: int
    time: float | None
    l: float
    out_of_domain: bool
    z: dict
    alerts: dict

    def to_dict(self):
        return {
            "schema": CONFORMANCE_SCHEMA,
            "index": self.index,
            "time": self.time,
            "l": self.l,
            "out_of_domain": self.out_of_domain,
            "z_p": self.z.get("p"),
            "z_sx": self.z.get("sx"),
            "z_sy": self.z.get("sy"),
            "z_sh": self.z.get("sh"),
            "alerts": {k: sorted(v) for k, v in self.alerts.items()},
        }


def _thr_key(t):
    return f"{float(t):g}"


class ConformanceMonitor:
    """Scores samples one at a time against a tunnel and its parameter fields.

    An alert for threshold ``t`` lists every score with ``|z| > t``.
    """

    def __init__(self, tunnel: tgp.TunnelModel, fields=None, thresholds=(2.0, 3.0), domain_tol=1e-9):
        self.tunnel = tunnel
        self.fields = {} if fields is None else (fields if isinstance(fields, dict) else {f.channel: f for f in fields})
        self.thresholds = tuple(float(t) for t in thresholds)
        self.domain_tol = domain_tol
        self.count = 0

    def score(self, point, channels=None, time=None) -> ConformanceRecord:
        idx = self.count
        self.count += 1
        p = np.asarray(point, dtype=float).reshape(1, 3)
        S = self.tunnel.scalers.transform(p)
        ls = float(S[0, 2])
        alerts = {_thr_key(t): [] for t in self.thresholds}
        if abs(ls) > 1.0 + self.domain_tol:
            return ConformanceRecord(idx, time, float(p[0, 2]), True, {}, alerts)
        xp, yp = self.tunnel.pole(np.array([ls]))
        rho, theta = canonical_polar(S[:, 0] - xp, S[:, 1] - yp)
        mu, sd = self.tunnel.predict(theta, np.array([ls]))
        z = {"p": float((rho[0] - mu[0]) / sd[0])}
        channels = channels or {}
        q = full_circle(rho, theta, np.array([ls]))
        for name, fld in self.fields.items():
            if name in channels and channels[name] is not None and np.isfinite(channels[name]):
                m, s = fld.predict_full(q)
                z[CHANNEL_KEYS.get(name, name)] = z_score(float(channels[name]), m[0], s[0])
        for t in self.thresholds:
            alerts[_thr_key(t)] = [k for k, v in z.items() if abs(v) > t]
        return ConformanceRecord(idx, time, float(p[0, 2]), False, z, alerts)


def conformance_stream(track: Trajectory, tunnel: tgp.TunnelModel, fields=None, thresholds=(2.0, 3.0)):
    """Yield a :class:`ConformanceRecord` per sample, in arrival order."""
    mon = ConformanceMonitor(tunnel, fields, thresholds)
    for i in range(len(track)):
        ch = {k: v[i] for k, v in track.channels.items()}
        t = None if track.times is None else float(track.times[i])
        yield mon.score(track.points[i], ch, t)
