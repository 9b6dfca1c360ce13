"""Sparse variational Gaussian process regression.

The variational posterior is stored in the classical form
``q(u) = N(m, L L^T)`` over the function values at the inducing inputs
``Z``.  Training optimises it relative to the prior Cholesky factor by
default (``TrainConfig.whiten``), which converges far faster with Adam.  The bound maximised is the minibatch form of the uncollapsed
SVGP bound with a Gaussian likelihood whose noise is either constant or
driven by a second latent GP on the log noise variance (plug-in mean,
exp link).

Two structural options serve the tunnel models:

* ``parity`` -- when non-zero the inducing set is mirrored by a half-turn
  rotation of its angular column.  The mirrored values are ``parity * u``
  so the posterior mean satisfies ``f(theta + pi) = parity * f(theta)``
  exactly.
* ``weights`` -- per-point weights on the data-fit term.

Gradients come from torch autograd in float64.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .kernels import (
    ANGULAR_DIM,
    DEFAULT_JITTER,
    KERNEL_KINDS,
    MAX_JITTER,
    KernelParams,
    correlation,
    n_lengthscales,
    wrap_angle,
    wrap_angle_t,
)

FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(RuntimeError):
    """Raised when a kernel matrix cannot be factorised even at maximum jitter."""


class TrainingError(RuntimeError):
    """Raised when the bound diverges; carries the last finite state."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass
class InducingSet:
    locations: np.ndarray

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        if len(self.locations) < 1:
            raise ValueError("need at least one inducing point")
        if not np.all(np.isfinite(self.locations)):
            raise ValueError("inducing locations must be finite")

    @property
    def count(self):
        return len(self.locations)


@dataclass
class VariationalDist:
    mean: np.ndarray
    cov_factor: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.cov_factor = np.tril(np.asarray(self.cov_factor, dtype=float))
        if np.any(np.diag(self.cov_factor) <= 0):
            raise ValueError("covariance factor needs a strictly positive diagonal")

    @property
    def cov(self):
        return self.cov_factor @ self.cov_factor.T


@dataclass
class NoiseModel:
    """Observation noise.

    ``kind == "constant"`` uses ``precision``.  ``kind ==
    "heteroscedastic"`` uses ``latent``, an :class:`SvgpState` over the same
    inputs whose posterior mean plus ``offset`` is the log noise variance.
    """

    kind: str = "constant"
    precision: float = 1.0
    latent: "SvgpState | None" = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "heteroscedastic"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "constant" and not self.precision > 0:
            raise ValueError("noise precision must be positive")
        if self.kind == "heteroscedastic" and self.latent is None:
            raise ValueError("heteroscedastic noise needs a latent GP")


@dataclass
class SvgpState:
    inducing: InducingSet
    variational: VariationalDist
    kernel_params: KernelParams
    noise: NoiseModel | None = None
    kernel: str = "rbf"
    parity: int = 0
    jitter: float = DEFAULT_JITTER
    elbo_trace: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.kernel not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.parity not in (-1, 0, 1):
            raise ValueError("parity must be -1, 0 or +1")
        dim = self.inducing.locations.shape[1]
        if len(self.kernel_params.lengthscales) != n_lengthscales(self.kernel, dim):
            raise ValueError("kernel lengthscales do not match the input dimension")
        if self.variational.mean.shape[0] != self.inducing.count:
            raise ValueError("variational mean length differs from inducing count")
        j = ANGULAR_DIM[self.kernel]
        if j is not None:
            self.inducing.locations[:, j] = wrap_angle(self.inducing.locations[:, j])

    @property
    def input_dim(self):
        return self.inducing.locations.shape[1]

    def to_dict(self):
        L = self.variational.cov_factor
        out = {
            "format_version": FORMAT_VERSION,
            "kernel": self.kernel,
            "parity": self.parity,
            "jitter": self.jitter,
            "kernel_params": self.kernel_params.to_dict(),
            "inducing": self.inducing.locations.tolist(),
            "mean": self.variational.mean.tolist(),
            "cov_factor_lower": L[np.tril_indices(len(L))].tolist(),
            "noise": None,
        }
        if self.noise is not None:
            nz = {"kind": self.noise.kind, "precision": self.noise.precision, "offset": self.noise.offset}
            if self.noise.latent is not None:
                nz["latent"] = self.noise.latent.to_dict()
            out["noise"] = nz
        return out

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported SVGP format version {d.get('format_version')!r}")
        Z = np.asarray(d["inducing"], dtype=float)
        M = len(Z)
        L = np.zeros((M, M))
        L[np.tril_indices(M)] = d["cov_factor_lower"]
        noise = None
        if d["noise"] is not None:
            nz = d["noise"]
            latent = cls.from_dict(nz["latent"]) if "latent" in nz else None
            noise = NoiseModel(nz["kind"], nz["precision"], latent, nz["offset"])
        return cls(
            InducingSet(Z),
            VariationalDist(d["mean"], L),
            KernelParams.from_dict(d["kernel_params"]),
            noise,
            d["kernel"],
            d["parity"],
            d["jitter"],
        )


# ---------------------------------------------------------------------------
# torch parameter packing
# ---------------------------------------------------------------------------


def _t(x):
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=torch.float64)


def _inv_softplus(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


def _lower(raw):
    return torch.tril(raw, -1) + torch.diag(F.softplus(torch.diagonal(raw)))


def _raw_lower(L):
    raw = np.tril(np.asarray(L, dtype=float)).copy()
    raw[np.diag_indices(len(raw))] = _inv_softplus(np.diag(L))
    return raw


class Packed:
    """Unconstrained torch parameters of an :class:`SvgpState`.

    Variances and lengthscales are optimised on the log scale and the
    diagonal of each covariance factor through a softplus.  With ``whiten``
    the variational parameters are held relative to the prior factor,
    ``m = sqrt(var) Lz v`` and ``L = sqrt(var) Lz Lv``, which conditions the
    optimisation far better; the state it converts to is the same.
    """

    ORDER = (
        "Z", "m", "L_raw", "v", "Lv_raw", "log_var", "log_ls", "log_noise",
        "m_g", "Lg_raw", "v_g", "Lvg_raw", "log_var_g", "offset",
    )

    def __init__(self, state: SvgpState, whiten=False):
        self.kernel = state.kernel
        self.parity = state.parity
        self.jitter = state.jitter
        self.c = state.kernel_params.wendland_c
        self.tau = state.kernel_params.wendland_tau
        self.noise_kind = None if state.noise is None else state.noise.kind
        kp = state.kernel_params
        p = {
            "Z": _t(state.inducing.locations),
            "m": _t(state.variational.mean),
            "L_raw": _t(_raw_lower(state.variational.cov_factor)),
            "log_var": _t(math.log(kp.variance)),
            "log_ls": _t(np.log(kp.lengthscales)),
        }
        if self.noise_kind == "constant":
            p["log_noise"] = _t(-math.log(state.noise.precision))
        elif self.noise_kind == "heteroscedastic":
            lat = state.noise.latent
            p["m_g"] = _t(lat.variational.mean)
            p["Lg_raw"] = _t(_raw_lower(lat.variational.cov_factor))
            p["log_var_g"] = _t(math.log(lat.kernel_params.variance))
            p["offset"] = _t(state.noise.offset)
        self.whiten = bool(whiten)
        self.p = p
        if self.whiten:
            with torch.no_grad():
                Lz = self.prior_factor()
                for mk, lk, vk, lvk, vark in (
                    ("m", "L_raw", "v", "Lv_raw", "log_var"),
                    ("m_g", "Lg_raw", "v_g", "Lvg_raw", "log_var_g"),
                ):
                    if mk not in p:
                        continue
                    Lk = torch.exp(0.5 * p[vark]) * Lz
                    v = torch.linalg.solve_triangular(Lk, p.pop(mk)[:, None], upper=False)[:, 0]
                    Lv = torch.linalg.solve_triangular(Lk, _lower(p.pop(lk)), upper=False)
                    p[vk] = v
                    p[lvk] = _t(_raw_lower(Lv.numpy()))

    def prior_factor(self):
        """Cholesky factor of the prior correlation on the (non-mirrored) inducing set."""
        p = self.p
        M = p["Z"].shape[0]
        ls = torch.exp(p["log_ls"])
        if self.parity == 0:
            return _cholesky(correlation(self.kernel, p["Z"], p["Z"], ls, self.c, self.tau), self.jitter)
        Zd = _augment(p["Z"], self.kernel, self.parity)
        C = correlation(self.kernel, Zd, Zd, ls, self.c, self.tau)
        return _cholesky(C[:M, :M], self.jitter)

    def moments(self, Lz, latent=False):
        """Variational mean and covariance factor ``(m, L)`` in the unwhitened frame."""
        p = self.p
        mk, lk, vk, lvk, vark = (
            ("m_g", "Lg_raw", "v_g", "Lvg_raw", "log_var_g") if latent else ("m", "L_raw", "v", "Lv_raw", "log_var")
        )
        if not self.whiten:
            return p[mk], _lower(p[lk])
        s = torch.exp(0.5 * p[vark])
        return s * (Lz @ p[vk]), s * (Lz @ _lower(p[lvk]))

    def names(self):
        return [k for k in self.ORDER if k in self.p]

    def trainable(self, train_inducing=True, learn_noise=True):
        skip = set()
        if not train_inducing:
            skip.add("Z")
        if not learn_noise:
            skip |= {"log_noise", "offset"}
        return [k for k in self.names() if k not in skip]

    def requires_grad_(self, names=None):
        for k in self.names():
            self.p[k].requires_grad_(names is None or k in names)
        return self

    def vector(self):
        return torch.cat([self.p[k].reshape(-1) for k in self.names()]).detach().numpy().copy()

    def load_vector(self, v):
        v = _t(v)
        i = 0
        for k in self.names():
            n = self.p[k].numel()
            self.p[k] = v[i : i + n].reshape(self.p[k].shape).clone()
            i += n
        return self

    def grad_vector(self):
        return torch.cat(
            [
                (self.p[k].grad if self.p[k].grad is not None else torch.zeros_like(self.p[k])).reshape(-1)
                for k in self.names()
            ]
        ).numpy().copy()

    def to_state(self):
        with torch.no_grad():
            p = {k: v.detach() for k, v in self.p.items()}
            Z = p["Z"].numpy().copy()
            ls = tuple(np.exp(p["log_ls"].numpy()).tolist())
            kp = KernelParams(float(torch.exp(p["log_var"])), ls, self.c, self.tau)
            Lz = self.prior_factor() if self.whiten else None
            m, L = self.moments(Lz)
            var = VariationalDist(m.numpy().copy(), L.numpy().copy())
            noise = None
            if self.noise_kind == "constant":
                noise = NoiseModel("constant", float(torch.exp(-p["log_noise"])))
            elif self.noise_kind == "heteroscedastic":
                latent = SvgpState(
                    InducingSet(Z.copy()),
                    VariationalDist(*(t.numpy().copy() for t in self.moments(Lz, latent=True))),
                    KernelParams(float(torch.exp(p["log_var_g"])), ls, self.c, self.tau),
                    None,
                    self.kernel,
                    abs(self.parity),
                    self.jitter,
                )
                noise = NoiseModel("heteroscedastic", 1.0, latent, float(p["offset"]))
            return SvgpState(InducingSet(Z), var, kp, noise, self.kernel, self.parity, self.jitter)


# ---------------------------------------------------------------------------
# shared algebra
# ---------------------------------------------------------------------------


def _augment(Z, kernel, parity):
    if parity == 0:
        return Z
    j = ANGULAR_DIM[kernel]
    if j is None:
        raise ValueError("a mirrored inducing set needs an angular kernel")
    cols = [wrap_angle_t(Z[:, d] + math.pi) if d == j else Z[:, d] for d in range(Z.shape[1])]
    return torch.cat([Z, torch.stack(cols, 1)], 0)


def _cholesky(C, jitter):
    eye = torch.eye(C.shape[0], dtype=C.dtype)
    j = jitter
    while True:
        L, info = torch.linalg.cholesky_ex(C + j * eye)
        if int(info) == 0:
            return L
        j *= 2.0
        if j > MAX_JITTER:
            raise NumericalError(
                f"kernel matrix of size {C.shape[0]} not positive definite at jitter {MAX_JITTER:g}"
            )


def _fold(A, M, parity):
    if parity == 0:
        return A
    return A[:M] + parity * A[M:]


def _kl(m, L, var, Lc):
    """KL(N(m, L L^T) || N(0, var * Lc Lc^T)) in torch."""
    M = m.shape[0]
    Lk = torch.sqrt(var) * Lc
    W = torch.linalg.solve_triangular(Lk, L, upper=False)
    a = torch.linalg.solve_triangular(Lk, m[:, None], upper=False)
    return 0.5 * (
        W.pow(2).sum()
        + a.pow(2).sum()
        - M
        + 2.0 * torch.log(torch.diagonal(Lk)).sum()
        - 2.0 * torch.log(torch.abs(torch.diagonal(L))).sum()
    )


def _terms(P: Packed, X):
    """Posterior pieces at inputs ``X`` plus the KL penalties."""
    p = P.p
    Z = p["Z"]
    M = Z.shape[0]
    ls = torch.exp(p["log_ls"])
    var = torch.exp(p["log_var"])
    Zd = _augment(Z, P.kernel, P.parity)
    Cdd = correlation(P.kernel, Zd, Zd, ls, P.c, P.tau)
    Lc = _cholesky(Cdd, P.jitter)
    Lz = Lc if P.parity == 0 else _cholesky(Cdd[:M, :M], P.jitter)
    Cx = correlation(P.kernel, Zd, X, ls, P.c, P.tau)
    A = torch.cholesky_solve(Cx, Lc)
    ktilde = var * torch.clamp(1.0 - (Cx * A).sum(0), min=0.0)
    Af = _fold(A, M, P.parity)
    m, L = P.moments(Lz)
    out = {
        "mean": Af.T @ m,
        "qvar": (L.T @ Af).pow(2).sum(0),
        "ktilde": ktilde,
        "kl": _kl(m, L, var, Lz),
    }
    if P.noise_kind == "heteroscedastic":
        Ag = _fold(A, M, abs(P.parity))
        mg, Lg = P.moments(Lz, latent=True)
        out["log_noise"] = Ag.T @ mg + p["offset"]
        out["kl"] = out["kl"] + _kl(mg, Lg, torch.exp(p["log_var_g"]), Lz)
    elif P.noise_kind == "constant":
        out["log_noise"] = p["log_noise"].expand(X.shape[0])
    return out


def _elbo_t(P: Packed, X, y, total_n, w=None):
    t = _terms(P, X)
    g = t["log_noise"]
    inv = torch.exp(-g)
    ll = -0.5 * LOG_2PI - 0.5 * g - 0.5 * inv * ((y - t["mean"]).pow(2) + t["ktilde"] + t["qvar"])
    if w is not None:
        ll = ll * w
    return (total_n / X.shape[0]) * ll.sum() - t["kl"]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def kl_q_p(variational: VariationalDist, K_mm, jitter: float = 0.0):
    """Closed-form ``KL(q(u) || p(u))`` for ``p(u) = N(0, K_mm)``."""
    K = np.asarray(K_mm, dtype=float)
    K = K + jitter * np.eye(len(K))
    try:
        Lk = np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("prior covariance not positive definite") from exc
    L = variational.cov_factor
    m = variational.mean
    import scipy.linalg as sla

    W = sla.solve_triangular(Lk, L, lower=True)
    a = sla.solve_triangular(Lk, m, lower=True)
    logdet_k = 2.0 * np.log(np.diag(Lk)).sum()
    logdet_s = 2.0 * np.log(np.abs(np.diag(L))).sum()
    return float(0.5 * (np.sum(W**2) + a @ a - len(m) + logdet_k - logdet_s))


def elbo(inputs, targets, state: SvgpState, total_n=None, weights=None):
    """Minibatch evidence lower bound.

    The per-point sum over the batch is rescaled by ``total_n / batch_size``
    before the KL penalty is subtracted.
    """
    X = _t(np.atleast_2d(inputs).reshape(len(targets), -1))
    y = _t(targets)
    if len(y) == 0:
        raise ValueError("empty batch")
    total_n = len(y) if total_n is None else total_n
    if total_n < len(y):
        raise ValueError("total_n must be at least the batch size")
    w = None if weights is None else _t(weights)
    with torch.no_grad():
        return float(_elbo_t(Packed(state), X, y, total_n, w))


def elbo_gradient(inputs, targets, state: SvgpState, total_n=None, weights=None):
    """Return ``(elbo, flat_params, flat_gradient, packed)`` via autograd."""
    X = _t(np.atleast_2d(inputs).reshape(len(targets), -1))
    y = _t(targets)
    total_n = len(y) if total_n is None else total_n
    w = None if weights is None else _t(weights)
    P = Packed(state).requires_grad_()
    val = _elbo_t(P, X, y, total_n, w)
    val.backward()
    return float(val), P.vector(), P.grad_vector(), P


def elbo_at(vector, template: SvgpState, inputs, targets, total_n=None, weights=None):
    """Bound as a function of the flat unconstrained parameter vector."""
    X = _t(np.atleast_2d(inputs).reshape(len(targets), -1))
    y = _t(targets)
    total_n = len(y) if total_n is None else total_n
    w = None if weights is None else _t(weights)
    P = Packed(template).load_vector(vector)
    with torch.no_grad():
        return float(_elbo_t(P, X, y, total_n, w))


def predict(query_points, state: SvgpState, include_noise=True, chunk=20000):
    """Predictive mean and variance at ``query_points``.

    With ``include_noise`` the observation-noise variance at the query is
    added (constant or heteroscedastic).
    """
    Xq = np.atleast_2d(np.asarray(query_points, dtype=float))
    if Xq.shape[1] != state.input_dim:
        Xq = Xq.reshape(-1, state.input_dim)
    P = Packed(state)
    mu = np.empty(len(Xq))
    var = np.empty(len(Xq))
    with torch.no_grad():
        for s in range(0, len(Xq), chunk):
            t = _terms(P, _t(Xq[s : s + chunk]))
            v = t["ktilde"] + t["qvar"]
            if include_noise and "log_noise" in t:
                v = v + torch.exp(t["log_noise"])
            mu[s : s + chunk] = t["mean"].numpy()
            var[s : s + chunk] = v.numpy()
    return mu, np.maximum(var, np.finfo(float).tiny)


def predict_noise(query_points, state: SvgpState):
    """Observation-noise variance alone at ``query_points``."""
    Xq = np.atleast_2d(np.asarray(query_points, dtype=float)).reshape(-1, state.input_dim)
    with torch.no_grad():
        return torch.exp(_terms(Packed(state), _t(Xq))["log_noise"]).numpy().copy()


# ---------------------------------------------------------------------------
# initialisation and training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    num_inducing: int = 10
    batch_size: int = 400
    learning_rate: float = 1e-2
    steps: int = 2000
    seed: int = 0
    jitter: float = DEFAULT_JITTER
    train_inducing: bool = True
    learn_noise: bool = True
    # linear decay to lr * final_lr_fraction over the last half of training
    final_lr_fraction: float = 0.1
    # optimise q(u) relative to the prior factor (see Packed)
    whiten: bool = True
    betas: tuple = (0.9, 0.999)


def _grid_counts(M, D):
    n = round(M ** (1.0 / D))
    if n**D == M:
        return [n] * D
    counts = [1] * D
    counts[0] = M
    return counts


def default_inducing(inputs, M, kernel="rbf", half_turn=False):
    """Uniform quantile spacing over the data range; angles uniform on the circle.

    For several dimensions a product grid is used when ``M`` is a perfect
    power of the dimension, otherwise all ``M`` points are spread along the
    first dimension and the rest sit at their medians.  ``half_turn`` places
    angles on ``[0, pi)`` (for mirrored sets).
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    if X.shape[0] == 1 and X.shape[1] != 1:
        X = X.T
    D = X.shape[1]
    j = ANGULAR_DIM[kernel]
    axes = []
    for d, n in enumerate(_grid_counts(M, D)):
        q = (np.arange(n) + 0.5) / n
        if d == j:
            axes.append(q * math.pi if half_turn else -math.pi + 2 * math.pi * q)
        elif n == 1:
            axes.append(np.array([np.median(X[:, d])]))
        else:
            axes.append(np.quantile(X[:, d], q))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def initial_state(
    inputs,
    targets,
    num_inducing=10,
    kernel="rbf",
    noise="constant",
    parity=0,
    inducing=None,
    wendland_c=math.pi,
    jitter=DEFAULT_JITTER,
):
    X = np.asarray(inputs, dtype=float)
    X = X.reshape(len(targets), -1)
    y = np.asarray(targets, dtype=float)
    Z = default_inducing(X, num_inducing, kernel, parity != 0) if inducing is None else np.asarray(inducing, float)
    j = ANGULAR_DIM[kernel]
    ls = [max(float(np.std(X[:, d])), 1e-3) for d in range(X.shape[1]) if d != j]
    # the prior mean is zero, so scale by the second moment rather than the variance
    vy = max(float(np.mean(y**2)), 1e-6)
    kp = KernelParams(vy, ls, wendland_c)
    with torch.no_grad():
        C = correlation(kernel, _t(Z), _t(Z), _t(ls), wendland_c, kp.wendland_tau)
        Lc = _cholesky(C, jitter).numpy()
    M = len(Z)
    var = VariationalDist(np.zeros(M), 0.1 * math.sqrt(vy) * Lc)
    if noise == "constant":
        nm = NoiseModel("constant", 1.0 / (0.1 * vy))
    elif noise == "heteroscedastic":
        lat = SvgpState(
            InducingSet(Z.copy()),
            VariationalDist(np.zeros(M), 0.1 * Lc),
            KernelParams(1.0, ls, wendland_c),
            None,
            kernel,
            abs(parity),
            jitter,
        )
        nm = NoiseModel("heteroscedastic", 1.0, lat, math.log(0.1 * vy))
    else:
        raise ValueError(f"unknown noise kind {noise!r}")
    return SvgpState(InducingSet(Z), var, kp, nm, kernel, parity, jitter)


def train(
    inputs,
    targets,
    config: TrainConfig | None = None,
    *,
    kernel="rbf",
    noise="constant",
    parity=0,
    weights=None,
    inducing=None,
    wendland_c=math.pi,
    init: SvgpState | None = None,
):
    """Fit an SVGP by Adam on minibatches drawn uniformly with replacement.

    Batches come from a Philox generator seeded with ``config.seed`` so a run
    is reproducible.  When the batch size reaches the data size every step
    uses the full data.  The per-step bound is stored in
    ``state.elbo_trace``.
    """
    cfg = config or TrainConfig()
    y = np.asarray(targets, dtype=float).ravel()
    X = np.asarray(inputs, dtype=float).reshape(len(y), -1)
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    if init is None:
        init = initial_state(X, y, cfg.num_inducing, kernel, noise, parity, inducing, wendland_c, cfg.jitter)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        weights = weights / weights.mean()
    Xt, yt = _t(X), _t(y)
    wt = None if weights is None else _t(weights)
    P = Packed(init, whiten=cfg.whiten)
    names = P.trainable(cfg.train_inducing, cfg.learn_noise)
    P.requires_grad_(names)
    opt = torch.optim.Adam([P.p[k] for k in names], lr=cfg.learning_rate, betas=tuple(cfg.betas))
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    full = cfg.batch_size >= n
    trace = []
    last_good = copy.deepcopy(init)
    half = cfg.steps // 2
    for step in range(cfg.steps):
        if step >= half and cfg.steps > 1:
            frac = (step - half) / max(cfg.steps - 1 - half, 1)
            lr = cfg.learning_rate * (1.0 - (1.0 - cfg.final_lr_fraction) * frac)
            for g in opt.param_groups:
                g["lr"] = lr
        if full:
            xb, yb, wb = Xt, yt, wt
        else:
            idx = torch.from_numpy(rng.integers(0, n, size=cfg.batch_size))
            xb, yb = Xt[idx], yt[idx]
            wb = None if wt is None else wt[idx]
        opt.zero_grad()
        try:
            val = _elbo_t(P, xb, yb, n, wb)
        except NumericalError as exc:
            raise TrainingError(f"factorisation failed at step {step}: {exc}", last_good) from exc
        if not torch.isfinite(val):
            raise TrainingError(f"bound became non-finite at step {step}", last_good)
        (-val).backward()
        opt.step()
        trace.append(float(val.detach()))
        if step % 100 == 0:
            last_good = P.to_state()
    state = P.to_state()
    state.elbo_trace = trace
    return state
