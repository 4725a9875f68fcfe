"""ARD kernels, their expectations under diagonal Gaussians, and the latent KL.

Two kernel families are supported:

``rbf``
    ``k(x, x') = sf2 * exp(-0.5 * sum_q w_q (x_q - x'_q)^2)`` with inducing
    inputs ``Z`` living in latent space.
``linear``
    ``k(x, x') = sf2 * sum_q w_q x_q x'_q``.  The inducing variables are the
    weight-space coordinates of the function (features ``sqrt(sf2 * w) * x``),
    so ``Kuu = I`` and the sparse bound is exact.  ``Z`` is unused.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NumericDomainError, ShapeError

JITTER = 1e-6


@dataclass
class ArdKernelParams:
    signal_variance: float
    weights: np.ndarray
    kind: str = "rbf"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.signal_variance = float(self.signal_variance)
        if self.kind not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.signal_variance > 0:
            raise NumericDomainError("signal_variance must be positive")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise NumericDomainError("ARD weights must be finite and non-negative")

    @property
    def input_dim(self):
        return self.weights.shape[0]


@dataclass
class GaussianLatent:
    """Factorised Gaussian ``q(X)``: one diagonal Gaussian per row."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if self.means.shape != self.variances.shape:
            raise ShapeError(f"means {self.means.shape} vs variances {self.variances.shape}")
        if not np.all(np.isfinite(self.means)):
            raise NumericDomainError("latent means must be finite")
        if not np.all(self.variances > 0):
            raise NumericDomainError("latent variances must be strictly positive")

    @property
    def shape(self):
        return self.means.shape


@dataclass
class InducingInputs:
    locations: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        if self.locations.shape[0] < 1:
            raise ShapeError("need at least one inducing input")
        if np.unique(self.locations, axis=0).shape[0] != self.locations.shape[0]:
            raise ValueError("inducing inputs must be pairwise distinct")

    @property
    def num(self):
        return self.locations.shape[0]


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericDomainError("non-finite input")


def _check_q(Q, *arrays):
    for a in arrays:
        if a.shape[-1] != Q:
            raise ShapeError(f"expected {Q} latent columns, got {a.shape[-1]}")


def kernel_matrix(X1, X2, params):
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    _check_q(params.input_dim, X1, X2)
    _check_finite(X1, X2)
    w = params.weights
    if params.kind == "linear":
        return (X1 * (params.signal_variance * w)) @ X2.T
    r2 = (w * (X1[:, None, :] - X2[None, :, :]) ** 2).sum(-1)
    return params.signal_variance * np.exp(-0.5 * r2)


def kernel_matrix_grads(X1, X2, params, G):
    """Gradients of ``sum(G * K(X1, X2))``.

    Returns ``(dX1, dX2, d_signal_variance, d_weights)``.
    """
    w = params.weights
    if params.kind == "linear":
        sf2 = params.signal_variance
        dX1 = (G @ X2) * (sf2 * w)
        dX2 = (G.T @ X1) * (sf2 * w)
        dom = np.einsum("ij,iq,jq->q", G, X1, X2)
        return dX1, dX2, float(dom @ w), sf2 * dom
    K = kernel_matrix(X1, X2, params)
    GK = G * K
    diff = X1[:, None, :] - X2[None, :, :]
    dX1 = -(GK[..., None] * diff).sum(1) * w
    dX2 = (GK[..., None] * diff).sum(0) * w
    dw = -0.5 * (GK[..., None] * diff**2).sum((0, 1))
    return dX1, dX2, GK.sum() / params.signal_variance, dw


def inducing_covariance(Z, params, jitter=JITTER):
    """``Kuu`` with ``jitter * signal_variance`` on the diagonal."""
    if params.kind == "linear":
        return np.eye(params.input_dim)
    Z = Z.locations if isinstance(Z, InducingInputs) else Z
    K = kernel_matrix(Z, Z, params)
    K[np.diag_indices_from(K)] += jitter * params.signal_variance
    return K


def inducing_covariance_grads(Z, params, G, jitter=JITTER):
    """Gradients of ``sum(G * Kuu)``: ``(dZ, d_signal_variance, d_weights)``."""
    Q = params.input_dim
    if params.kind == "linear":
        return None, 0.0, np.zeros(Q)
    Z = Z.locations if isinstance(Z, InducingInputs) else Z
    dX1, dX2, dvar, dw = kernel_matrix_grads(Z, Z, params, G)
    return dX1 + dX2, dvar + jitter * np.trace(G), dw


def num_inducing(Z, params):
    if params.kind == "linear":
        return params.input_dim
    Z = Z.locations if isinstance(Z, InducingInputs) else Z
    return Z.shape[0]


def _unpack(q, Z, params):
    mu, S = q.means, q.variances
    _check_q(params.input_dim, mu)
    if params.kind == "rbf":
        Z = Z.locations if isinstance(Z, InducingInputs) else np.atleast_2d(np.asarray(Z, dtype=float))
        _check_q(params.input_dim, Z)
        _check_finite(Z)
    if not np.all(S > 0):
        raise NumericDomainError("latent variances must be strictly positive")
    return mu, S, Z


def psi0_per_point(q, params):
    if params.kind == "linear":
        return ((q.means**2 + q.variances) * (params.signal_variance * params.weights)).sum(1)
    return np.full(q.means.shape[0], params.signal_variance)


def psi1(q, Z, params):
    mu, S, Z = _unpack(q, Z, params)
    w = params.weights
    if params.kind == "linear":
        return mu * np.sqrt(params.signal_variance * w)
    den = w * S + 1.0  # (N, Q)
    d = mu[:, None, :] - Z[None, :, :]
    expo = -0.5 * (w * d * d / den[:, None, :]).sum(-1) - 0.5 * np.log(den).sum(-1)[:, None]
    return params.signal_variance * np.exp(expo)


def psi2_per_point(q, Z, params):
    """Per-point second statistic, shape ``(N, M, M)``."""
    mu, S, Z = _unpack(q, Z, params)
    w = params.weights
    if params.kind == "linear":
        r = np.sqrt(params.signal_variance * w)
        outer = mu[:, :, None] * mu[:, None, :]
        idx = np.arange(mu.shape[1])
        outer[:, idx, idx] += S
        return outer * np.outer(r, r)[None]
    c = np.ascontiguousarray
    return _kernels.rbf_psi2n(c(mu), c(S), c(Z), params.signal_variance, c(w))


def psi_statistics(q, Z, params):
    """Return ``(psi0, Psi1, Psi2)`` with ``Psi2`` summed over points."""
    P2 = psi2_per_point(q, Z, params).sum(0)
    return psi0_per_point(q, params).sum(), psi1(q, Z, params), 0.5 * (P2 + P2.T)


def psi2_weighted(q, Z, params, G2):
    """Per-point ``sum(G2 * Psi2_n)`` together with its gradients.

    Returns ``(wsum, grads)`` with ``grads`` keyed like :func:`psi_grads`.
    """
    mu, S, Z = _unpack(q, Z, params)
    w = params.weights
    G2 = np.ascontiguousarray(G2, dtype=float)
    if params.kind == "linear":
        sf2 = params.signal_variance
        om = sf2 * w
        r = np.sqrt(om)
        Gs = G2 + G2.T
        Rw = Gs * np.outer(r, r)
        wsum = np.einsum("nq,qr,nr->n", mu, G2 * np.outer(r, r), mu) + S @ (np.diag(G2) * om)
        dmu = mu @ Rw
        dS = np.broadcast_to(np.diag(G2) * om, S.shape).copy()
        P = mu.T @ mu + np.diag(S.sum(0))
        dom = ((Gs * P) @ r) / (2.0 * r)
        grads = {"means": dmu, "variances": dS, "Z": None, "signal_variance": float(dom @ w), "weights": sf2 * dom}
        return wsum, grads
    c = np.ascontiguousarray
    dmu, dS, dZ, dvar, dw, wsum = _kernels.rbf_psi2_grads(c(mu), c(S), c(Z), params.signal_variance, c(w), G2)
    return wsum, {"means": dmu, "variances": dS, "Z": dZ, "signal_variance": dvar, "weights": dw}


def psi01_grads(q, Z, params, g0, G1):
    """Backpropagate ``sum(g0 * psi0_n) + sum(G1 * Psi1)`` only."""
    mu, S, Z = _unpack(q, Z, params)
    w = params.weights
    g0 = np.broadcast_to(np.asarray(g0, dtype=float), (mu.shape[0],))
    if params.kind == "linear":
        # effective weights om = sf2 * w enter Psi1 through r = sqrt(om)
        sf2 = params.signal_variance
        om = sf2 * w
        r = np.sqrt(om)
        dom = g0 @ (mu**2 + S) + (G1 * mu).sum(0) / (2.0 * r)
        return {
            "means": 2.0 * g0[:, None] * mu * om + G1 * r,
            "variances": g0[:, None] * om * np.ones_like(S),
            "Z": None,
            "signal_variance": float(dom @ w),
            "weights": sf2 * dom,
        }
    var = params.signal_variance
    T1 = G1 * psi1(q, Z, params)  # (N, M)
    den = w * S + 1.0
    d = mu[:, None, :] - Z[None, :, :]
    ratio = w * d / den[:, None, :]  # (N, M, Q)
    return {
        "means": -(T1[..., None] * ratio).sum(1),
        "variances": -0.5 * T1.sum(1)[:, None] * w / den + 0.5 * (T1[..., None] * ratio**2).sum(1),
        "Z": (T1[..., None] * ratio).sum(0),
        "signal_variance": T1.sum() / var + g0.sum(),
        "weights": -0.5 * (T1.sum(1)[:, None] * S / den).sum(0)
        - 0.5 * (T1[..., None] * (d / den[:, None, :]) ** 2).sum((0, 1)),
    }


def add_grads(a, b):
    return {key: (None if a[key] is None else a[key] + b[key]) for key in a}


def psi_grads(q, Z, params, g0, G1, G2):
    """Backpropagate ``sum(g0 * psi0_n) + sum(G1 * Psi1) + sum(G2 * Psi2)``.

    ``g0`` may be a scalar or a per-point vector.  Returns a dict with keys
    ``means``, ``variances``, ``Z`` (None for linear), ``signal_variance`` and
    ``weights``.
    """
    _, g2 = psi2_weighted(q, Z, params, G2)
    return add_grads(psi01_grads(q, Z, params, g0, G1), g2)


def kl_to_prior(q):
    """KL from ``q(X)`` to independent unit Gaussians."""
    S = q.variances
    if not np.all(S > 0):
        raise NumericDomainError("latent variances must be strictly positive")
    return 0.5 * float(np.sum(q.means**2 + S - np.log(S) - 1.0))


def kl_to_prior_grads(q):
    """``(d_means, d_variances)`` of :func:`kl_to_prior`."""
    return q.means.copy(), 0.5 * (1.0 - 1.0 / q.variances)
