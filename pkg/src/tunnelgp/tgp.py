"""Tunnel Gaussian processes.

Model 1 (:class:`TunnelModel`) regresses the signed diametral radius on
``(theta, l)`` with a mirrored inducing set, so the posterior mean is
exactly antisymmetric under a half turn and the posterior spread exactly
symmetric.  Model 2 (:class:`ParamField`) regresses a scalar channel on
``(|rho|, theta, l)``.

Two weighting modes decide what the diametral GP estimates:

``slice`` (default)
    each point is weighted by ``1 / max(|rho|, floor)``.  This undoes the
    ``|rho|`` area factor of polar coordinates, so the fitted ``(mu,
    sigma)`` are the moments of the density *along* the diameter.  For a
    Gaussian cross-section they are exact, ``sigma(0)`` equals the axis
    standard deviation, and the plane density is recovered as
    ``exp(rho mu / sigma^2 - rho^2 / (2 sigma^2)) / Z(l)``, which is
    continuous at the pole.
``polar``
    unweighted fit and the density ``N(rho; mu, sigma^2) / (pi
    max(|rho|, floor))``.  Kept for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from . import svgp
from .kernels import wrap_angle
from .preprocess.transforms import (
    CylindricalCloud,
    PoleModel,
    Scalers,
    canonical_polar,
    fit_pole,
    PoleConfig,
    full_circle,
    to_cylindrical,
)
from .svgp import InducingSet, SvgpState, TrainConfig, VariationalDist
from .trajectory import Trajectory

MODEL_VERSION = 1
TUNNEL_C = math.pi / 2.0
FIELD_C = math.pi
WEIGHTINGS = ("slice", "polar")
CHANNELS = ("S_x", "S_y", "S_h")


# ---------------------------------------------------------------------------
# diametral augmentation
# ---------------------------------------------------------------------------


def augment_diametral(inducing: InducingSet, variational: VariationalDist, parity: int = -1):
    """Mirror an inducing set over ``(theta, l)`` by a half-turn rotation.

    Returns ``(locations (2M, 2), mean (2M,), S_d (2M, 2M))`` with
    ``m' = parity * m`` and ``S_d = [[S, parity S], [parity S, S]]``.  The
    training and prediction code apply the same structure implicitly.
    """
    Z = inducing.locations
    Zr = Z.copy()
    Zr[:, 0] = wrap_angle(Z[:, 0] + math.pi)
    S = variational.cov
    m = variational.mean
    Sd = np.block([[S, parity * S], [parity * S, S]])
    return np.vstack([Z, Zr]), np.concatenate([m, parity * m]), Sd


# ---------------------------------------------------------------------------
# model 1
# ---------------------------------------------------------------------------


@dataclass
class TunnelConfig:
    """Hyper-parameters for :func:`fit_tunnel`.

    The inducing set is a ``num_angles x num_levels`` grid: angles evenly
    placed on ``[0, pi)`` and ``l`` levels at data quantiles.  The mirror
    doubles the effective set.
    """

    num_angles: int = 4
    num_levels: int = 5
    batch_size: int = 800
    learning_rate: float = 1e-2
    steps: int = 3000
    seed: int = 0
    weighting: str = "slice"
    rho_floor: float = 0.05
    train_inducing: bool = True
    final_lr_fraction: float = 0.1

    def __post_init__(self):
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.num_angles < 1 or self.num_levels < 1:
            raise ValueError("inducing grid needs at least one angle and one level")

    @property
    def num_inducing(self):
        return self.num_angles * self.num_levels


@dataclass
class TunnelModel:
    pole: PoleModel
    gp: SvgpState
    scalers: Scalers
    weighting: str = "slice"
    rho_floor: float = 0.05

    def predict(self, theta, l_scaled):
        """Mean and standard deviation of the signed radius at scaled ``(theta, l)``."""
        th = wrap_angle(np.asarray(theta, dtype=float)).ravel()
        l = np.broadcast_to(np.asarray(l_scaled, dtype=float), np.shape(theta)).ravel()
        mu, var = svgp.predict(np.column_stack([th, l]), self.gp)
        return mu, np.sqrt(var)

    def to_dict(self):
        return {
            "format_version": MODEL_VERSION,
            "kind": "tunnel",
            "weighting": self.weighting,
            "rho_floor": self.rho_floor,
            "scalers": self.scalers.to_dict(),
            "pole": self.pole.to_dict(),
            "gp": self.gp.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        _check(d, "tunnel")
        return cls(
            PoleModel.from_dict(d["pole"]),
            SvgpState.from_dict(d["gp"]),
            Scalers.from_dict(d["scalers"]),
            d["weighting"],
            float(d["rho_floor"]),
        )


def _check(d, kind):
    if d.get("format_version") != MODEL_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
    if d.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} model, got {d.get('kind')!r}")


def _sorted(cloud: CylindricalCloud, *extra):
    order = np.lexsort((cloud.rho, cloud.theta, cloud.l))
    return order, [np.asarray(e)[order] for e in extra]


def fit_tunnel(cloud: CylindricalCloud, config: TunnelConfig | None = None, pole=None, scalers=None) -> TunnelModel:
    """Train the diametral GP on a canonical cloud.

    Points are put in a fixed order first, so the result does not depend on
    the order they arrive in.
    """
    cfg = config or TunnelConfig()
    pole = pole or cloud.pole
    scalers = scalers or cloud.scalers
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    if pole is None or scalers is None:
        raise ValueError("the cloud carries no pole/scalers; pass them explicitly")
    order, _ = _sorted(cloud)
    rho = cloud.rho[order]
    X = np.column_stack([cloud.theta[order], cloud.l[order]])
    weights = None
    if cfg.weighting == "slice":
        weights = 1.0 / np.maximum(np.abs(rho), cfg.rho_floor)
    angles = (np.arange(cfg.num_angles) + 0.5) / cfg.num_angles * math.pi
    levels = np.quantile(X[:, 1], (np.arange(cfg.num_levels) + 0.5) / cfg.num_levels)
    A, Lv = np.meshgrid(angles, levels, indexing="ij")
    Z = np.column_stack([A.ravel(), Lv.ravel()])
    tc = TrainConfig(
        num_inducing=len(Z),
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        steps=cfg.steps,
        seed=cfg.seed,
        train_inducing=cfg.train_inducing,
        final_lr_fraction=cfg.final_lr_fraction,
    )
    init = svgp.initial_state(X, rho, len(Z), "tunnel", "heteroscedastic", -1, Z, TUNNEL_C)
    if weights is not None:
        # start the noise level at the weighted second moment
        w = weights / weights.mean()
        init.noise.offset = math.log(max(float(np.mean(w * rho**2)), 1e-6))
        init.kernel_params.variance = max(float(np.mean(w * rho**2)), 1e-6)
    gp = svgp.train(X, rho, tc, kernel="tunnel", noise="heteroscedastic", parity=-1, weights=weights, init=init)
    return TunnelModel(pole, gp, scalers, cfg.weighting, cfg.rho_floor)


def build_tunnel(points, config: TunnelConfig | None = None, pole_config: PoleConfig | None = None, source_ids=None):
    """Scale, fit the pole, transform and train, from structure-unit points ``(x, y, l)``."""
    P = np.asarray(points, dtype=float)
    scalers = Scalers.fit(P)
    S = scalers.transform(P)
    pole = fit_pole(S, pole_config)
    cloud = to_cylindrical(S, pole, scalers, source_ids, scaled=True)
    return fit_tunnel(cloud, config), cloud


# ---------------------------------------------------------------------------
# surfaces and densities
# ---------------------------------------------------------------------------


def tunnel_surface(model: TunnelModel, theta_grid, l_grid, k_sigma=2.0):
    """Inner and outer tunnel boundaries ``mu -/+ k sigma`` in structure units.

    ``theta_grid`` is in radians and ``l_grid`` in structure units.  Rows
    are ordered row-major in ``(l, theta)``.  Because the radius is signed,
    the inner boundary is ``mu - k sigma`` and the outer one ``mu + k
    sigma`` along each diameter.  The third coordinate of each boundary
    point is its ``l``.
    """
    if k_sigma < 0:
        raise ValueError("k_sigma must be non-negative")
    th = np.asarray(theta_grid, dtype=float)
    lg = np.asarray(l_grid, dtype=float)
    L, T = np.meshgrid(lg, th, indexing="ij")
    ls = model.scalers.scale_l(L.ravel())
    mu, sd = model.predict(T.ravel(), ls)
    xp, yp = model.pole(ls)
    out = {"l": L.ravel(), "theta": T.ravel(), "mean": mu, "std": sd}
    for name, r in (("inner", mu - k_sigma * sd), ("outer", mu + k_sigma * sd)):
        S = np.column_stack([r * np.cos(T.ravel()) + xp, r * np.sin(T.ravel()) + yp, ls])
        P = model.scalers.inverse(S)
        out[f"x_{name}"], out[f"y_{name}"], out[f"z_{name}"] = P[:, 0], P[:, 1], P[:, 2]
    out["shape"] = (len(lg), len(th))
    return out


def _log_slice_mass(mu, sd):
    """``log int exp(rho mu / s^2 - rho^2 / (2 s^2)) |rho| d rho``."""
    a = mu / sd
    base = math.log(math.sqrt(2.0 * math.pi)) + np.log(sd)
    t1 = np.log(sd * math.sqrt(2.0 / math.pi))
    with np.errstate(divide="ignore"):
        t2 = np.log(np.abs(mu * special.erf(a / math.sqrt(2.0)))) + 0.5 * a**2
    return base + np.logaddexp(t1, t2)


def angular_weights(model: TunnelModel, l_scaled, n_theta=720):
    """Quadrature nodes on ``[0, pi)`` with ``(mu, sigma)`` and log slice masses."""
    th = (np.arange(n_theta) + 0.5) * math.pi / n_theta
    mu, sd = model.predict(th, np.full(n_theta, float(l_scaled)))
    return th, mu, sd, _log_slice_mass(mu, sd)


def pdf_at_plane(model: TunnelModel, l, x, y, n_theta=720, rho_floor=None):
    """Density of the plane ``l`` (structure units) at points ``(x, y)``.

    For the ``slice`` weighting the density is
    ``exp(rho mu / s^2 - rho^2 / (2 s^2)) / Z(l)`` with ``Z`` integrated
    over angle by the midpoint rule on ``n_theta`` nodes.  For ``polar``
    it is ``N(rho; mu, s^2) / (pi max(|rho|, rho_floor))`` with the floor
    given in structure units.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast(x, y).shape
    ls = float(model.scalers.scale_l(l))
    S = model.scalers.transform(np.column_stack([np.ravel(np.broadcast_to(x, shape)),
                                                 np.ravel(np.broadcast_to(y, shape)),
                                                 np.full(int(np.prod(shape)), float(l))]))
    xp, yp = model.pole(np.array([ls]))
    rho, theta = canonical_polar(S[:, 0] - xp[0], S[:, 1] - yp[0])
    mu, sd = model.predict(theta, np.full(len(theta), ls))
    jac = model.scalers.jacobian
    if model.weighting == "slice":
        _, _, _, logm = angular_weights(model, ls, n_theta)
        log_z = special.logsumexp(logm) + math.log(math.pi / n_theta)
        logp = rho * mu / sd**2 - 0.5 * (rho / sd) ** 2 - log_z
        dens = np.exp(logp) / jac
    else:
        floor = rho_floor if rho_floor is not None else model.rho_floor * math.sqrt(jac)
        floor_s = floor / math.sqrt(jac)
        dens = stats.norm.pdf(rho, mu, sd) / (math.pi * np.maximum(np.abs(rho), floor_s)) / jac
    return dens.reshape(shape)


def plane_density(model: TunnelModel, l, x_range, y_range, step):
    """Density on the regular grid ``x_range x y_range`` (inclusive ends), indexed ``[y, x]``."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    xs = grid_axis(x_range, step)
    ys = grid_axis(y_range, step)
    X, Y = np.meshgrid(xs, ys)
    return pdf_at_plane(model, l, X, Y, rho_floor=step / 2.0)


def grid_axis(rng, step):
    lo, hi = rng
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


# ---------------------------------------------------------------------------
# model 2
# ---------------------------------------------------------------------------


@dataclass
class FieldConfig:
    num_inducing: int = 512
    batch_size: int = 1000
    learning_rate: float = 1e-2
    steps: int = 2000
    seed: int = 0


@dataclass
class ParamField:
    """A scalar channel over ``(|rho|, theta, l)``; targets standardised internally."""

    channel: str
    gp: SvgpState
    target_mean: float = 0.0
    target_std: float = 1.0

    def predict(self, rho, theta, l_scaled):
        """Mean and standard deviation at canonical ``(rho, theta, l)``."""
        q = full_circle(np.ravel(rho), np.ravel(theta), np.ravel(l_scaled))
        return self.predict_full(q)

    def predict_full(self, q):
        mu, var = svgp.predict(q, self.gp)
        return self.target_mean + self.target_std * mu, self.target_std * np.sqrt(var)

    def to_dict(self):
        return {
            "format_version": MODEL_VERSION,
            "kind": "param_field",
            "channel": self.channel,
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "gp": self.gp.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        _check(d, "param_field")
        return cls(d["channel"], SvgpState.from_dict(d["gp"]), float(d["target_mean"]), float(d["target_std"]))


def fit_param_field(cloud: CylindricalCloud, values, config: FieldConfig | None = None, channel="S_x") -> ParamField:
    """Heteroscedastic SVGP of one channel over the tunnel volume."""
    cfg = config or FieldConfig()
    v = np.asarray(values, dtype=float).ravel()
    if len(v) != len(cloud):
        raise ValueError("values must align with the cloud points")
    order, (v,) = _sorted(cloud, v)
    Q = full_circle(cloud.rho[order], cloud.theta[order], cloud.l[order])
    mean = float(v.mean())
    std = float(v.std())
    if not std > 0:
        std = 1.0
    yt = (v - mean) / std
    tc = TrainConfig(
        num_inducing=cfg.num_inducing,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        steps=cfg.steps,
        seed=cfg.seed,
    )
    gp = svgp.train(Q, yt, tc, kernel="param", noise="heteroscedastic", wendland_c=FIELD_C)
    return ParamField(channel, gp, mean, std)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _smooth_normals(rng, l_grid, lengthscale, count):
    """``count`` independent standard-normal paths over ``l_grid`` with RBF correlation."""
    l = np.asarray(l_grid, dtype=float)
    K = np.exp(-0.5 * ((l[:, None] - l[None, :]) / lengthscale) ** 2)
    w, V = np.linalg.eigh(K)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((count, len(l))) @ root.T


def _inverse_cdf(grid, logw, u):
    w = np.exp(logw - logw.max())
    c = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(grid))])
    c /= c[-1]
    return np.interp(u, c, grid)


def sample_trajectories(
    model: TunnelModel,
    fields=(),
    n=1,
    l_grid=None,
    seed=0,
    lengthscale=0.3,
    n_theta=720,
    n_rho=801,
    truncation=6.0,
):
    """Draw ``n`` smooth trajectories whose per-plane law is the tunnel density.

    Three smooth Gaussian paths over ``l_grid`` (structure units) are mapped
    through the normal CDF.  The first selects the angle from the marginal
    angular law of each plane, the second the signed radius from its law
    along that diameter, truncated at ``truncation`` standard deviations.
    Channel values are ``mu + sigma z`` with one further smooth path per
    field.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return []
    if l_grid is None:
        l_grid = model.scalers.unscale_l(np.linspace(-1.0, 1.0, 41))
    l_grid = np.asarray(l_grid, dtype=float)
    ls = model.scalers.scale_l(l_grid)
    rng = np.random.Generator(np.random.Philox(seed))
    g = _smooth_normals(rng, ls, lengthscale, n * (2 + len(fields))).reshape(n, 2 + len(fields), len(ls))
    U = stats.norm.cdf(g[:, :2])
    xp, yp = model.pole(ls)
    theta = np.empty((n, len(ls)))
    rho = np.empty((n, len(ls)))
    for j, lj in enumerate(ls):
        th, mu, sd, logm = angular_weights(model, lj, n_theta)
        if model.weighting != "slice":
            logm = np.zeros_like(logm)
        edges = np.concatenate([[0.0], th + 0.5 * math.pi / n_theta])
        pm = np.exp(logm - logm.max())
        c = np.concatenate([[0.0], np.cumsum(pm)])
        c /= c[-1]
        tj = np.interp(U[:, 0, j], c, edges)
        m, s = model.predict(tj, np.full(n, lj))
        for i in range(n):
            grid = m[i] + s[i] * np.linspace(-truncation, truncation, n_rho)
            if model.weighting == "slice":
                logw = -0.5 * ((grid - m[i]) / s[i]) ** 2 + np.log(np.abs(grid) + 1e-300)
            else:
                logw = -0.5 * ((grid - m[i]) / s[i]) ** 2
            rho[i, j] = _inverse_cdf(grid, logw, U[i, 1, j])
        theta[:, j] = tj
    out = []
    for i in range(n):
        S = np.column_stack([rho[i] * np.cos(theta[i]) + xp, rho[i] * np.sin(theta[i]) + yp, ls])
        P = model.scalers.inverse(S)
        channels = {}
        for k, fld in enumerate(fields):
            mu, sd = fld.predict(rho[i], theta[i], ls)
            channels[fld.channel] = mu + sd * g[i, 2 + k]
        out.append(Trajectory(P, channels, times=None, ident=f"sample-{i}"))
    return out
