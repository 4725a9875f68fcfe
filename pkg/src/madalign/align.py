"""Posterior-mode matching of unaligned points in the shared latent subspace.

After anchor training every kernel, noise and inducing parameter is frozen.
Each view's inducing-output posterior ``q(u)`` is then fixed at its collapsed
optimum, which makes the bound separate over data points: a new observation
gets its own Gaussian ``q(x*)`` by maximising a per-point bound.
"""
from dataclasses import dataclass, field
import csv
import json
import logging
import zlib

import numpy as np

from . import _kernels
from . import kernels as kc
from .errors import InferenceError, NoSharedSubspaceError, ShapeError
from .kernels import GaussianLatent
from .model import VARIANCE_FLOOR, _chol_inv, _cholesky, relevance_profile
from .optimize import OptimizerConfig, minimize

log = logging.getLogger(__name__)

DEFAULT_RESTARTS = 5
INFERENCE_OPT = OptimizerConfig(max_iters=1000, rtol=1e-10, patience=10, gtol=1e-7)


@dataclass
class LatentModeSet:
    modes: np.ndarray  # (N*, Q) posterior means
    view_id: int
    variances: np.ndarray | None = None
    bounds: np.ndarray | None = None

    def __post_init__(self):
        self.modes = np.atleast_2d(np.asarray(self.modes, dtype=float))
        if not np.all(np.isfinite(self.modes)):
            raise ValueError("modes must be finite")


@dataclass
class DistanceMatrix:
    values: np.ndarray

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            for row in self.values:
                writer.writerow([repr(float(v)) for v in row])


@dataclass
class AlignmentResult:
    permutation: np.ndarray  # permutation[i]: view-2 index matched to view-1 point i (-1 if unmatched)
    method: str
    total_cost: float
    distance_matrix: DistanceMatrix | None = None
    shared_dims: list = field(default_factory=list)
    complete: bool = True

    def to_dict(self):
        return {
            "permutation": [int(j) for j in self.permutation],
            "method": self.method,
            "total_cost": float(self.total_cost),
            "shared_dims": sorted(int(q) for q in self.shared_dims),
            "complete": self.complete,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def load_alignment(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return AlignmentResult(
        np.asarray(d["permutation"], dtype=np.int64),
        d["method"],
        float(d["total_cost"]),
        None,
        list(d.get("shared_dims", [])),
        bool(d.get("complete", True)),
    )


# ---------------------------------------------------------------------------
# Per-point inference
# ---------------------------------------------------------------------------


class ViewPredictor:
    """Frozen per-point bound for one view of a trained model."""

    def __init__(self, model, view_id):
        self.view_id = view_id
        self.view = model.view(view_id)
        self.anchor_data = model.anchors(view_id)
        self.anchor_latent = model.latent
        params = self.view.kernel
        Y = self.anchor_data - self.view.offset
        self.D = Y.shape[1]
        self.beta = 1.0 / self.view.noise_variance
        Kuu = kc.inducing_covariance(self.view.Z, params)
        _, P1, P2 = kc.psi_statistics(model.latent, self.view.Z, params)
        Kinv = _chol_inv(_cholesky(Kuu))
        Ainv = _chol_inv(_cholesky(Kuu + self.beta * P2))
        # optimal q(u): mean Kuu alpha, with alpha = beta Ainv Psi1^T Y, covariance Kuu Ainv Kuu
        self.alpha = self.beta * Ainv @ P1.T @ Y  # (M, D)
        B = self.alpha @ self.alpha.T + self.D * (Ainv - Kinv)
        self.B = 0.5 * (B + B.T)
        self.const = -0.5 * self.D * np.log(2.0 * np.pi / self.beta)

    def bound(self, Ystar, means, variances, grad=True):
        """Per-point bounds, shape ``(K,)``, and gradients w.r.t. means/variances."""
        params = self.view.kernel
        Yc = np.atleast_2d(Ystar) - self.view.offset
        q = GaussianLatent.__new__(GaussianLatent)
        q.means, q.variances = means, variances
        Z = self.view.Z
        p0 = kc.psi0_per_point(q, params)
        p1 = kc.psi1(q, Z, params)
        ay = Yc @ self.alpha.T  # (K, M)
        kl = 0.5 * (means**2 + variances - np.log(variances) - 1.0).sum(1)
        # wsum_n = -beta/2 tr(B Psi2_n), computed together with its gradients
        wsum, g2 = kc.psi2_weighted(q, Z, params, -0.5 * self.beta * self.B)
        vals = self.const - 0.5 * self.beta * ((Yc * Yc).sum(1) - 2.0 * (p1 * ay).sum(1) + self.D * p0) + wsum - kl
        if not grad:
            return vals, None, None
        g = kc.add_grads(kc.psi01_grads(q, Z, params, -0.5 * self.beta * self.D, self.beta * ay), g2)
        dmu = g["means"] - means
        dS = g["variances"] - 0.5 * (1.0 - 1.0 / variances)
        return vals, dmu, dS

    def nearest_anchor_init(self, Ystar):
        d2 = ((Ystar[:, None, :] - self.anchor_data[None, :, :]) ** 2).sum(-1)
        idx = np.argmin(d2, axis=1)
        return self.anchor_latent.means[idx].copy(), self.anchor_latent.variances[idx].copy()

    def optimize(self, Ystar, mu0, S0, config=INFERENCE_OPT):
        K, Q = mu0.shape

        def objective(vec):
            mu = vec[: K * Q].reshape(K, Q)
            logS = vec[K * Q :].reshape(K, Q)
            if np.any(logS > 50):
                return np.inf, np.full_like(vec, np.nan)
            eS = np.exp(logS)
            vals, dmu, dS = self.bound(Ystar, mu, VARIANCE_FLOOR + eS)
            return -vals.sum(), -np.concatenate([dmu.ravel(), (dS * eS).ravel()])

        x0 = np.concatenate([mu0.ravel(), np.log(np.maximum(S0 - VARIANCE_FLOOR, 1e-300)).ravel()])
        with np.errstate(over="ignore", under="ignore"):
            res = minimize(objective, x0, config)
        mu = res.x[: K * Q].reshape(K, Q)
        S = VARIANCE_FLOOR + np.exp(res.x[K * Q :].reshape(K, Q))
        with np.errstate(over="ignore", under="ignore"):
            vals, _, _ = self.bound(Ystar, mu, S, grad=False)
        return mu, S, vals, res


def _perturbations(Ystar, restarts, Q, seed):
    # seeded by each row's bytes, so a point's starts do not depend on its
    # position in the batch
    out = np.empty((restarts - 1, Ystar.shape[0], Q))
    for k, y in enumerate(Ystar):
        key = zlib.crc32(np.ascontiguousarray(y).tobytes())
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, key])
        out[:, k, :] = rng.standard_normal((restarts - 1, Q))
    return out


def infer_latents(model, view_id, Ystar, restarts=DEFAULT_RESTARTS, seed=0, init=None, config=INFERENCE_OPT):
    """Posterior ``q(x*)`` for every row of ``Ystar`` under view ``view_id``.

    Restart 0 starts from the nearest anchor in output space (or from
    ``init=(means, variances)`` when given); the others add seeded Gaussian
    perturbations of scale 0.5 to that start.  All restarts of all points are
    optimized as one batch and each point keeps its best restart.
    """
    pred = ViewPredictor(model, view_id)
    Ystar = np.atleast_2d(np.asarray(Ystar, dtype=float))
    if Ystar.shape[1] != pred.D:
        raise ShapeError(f"view {view_id} expects {pred.D} columns, got {Ystar.shape[1]}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if init is None:
        mu0, S0 = pred.nearest_anchor_init(Ystar)
    else:
        mu0 = np.atleast_2d(np.asarray(init[0], dtype=float)).copy()
        S0 = np.atleast_2d(np.asarray(init[1], dtype=float)).copy()
    K, Q = mu0.shape
    starts = np.concatenate([mu0[None], mu0[None] + 0.5 * _perturbations(Ystar, restarts, Q, seed)])
    mu, S, vals, res = pred.optimize(
        np.tile(Ystar, (restarts, 1)), starts.reshape(-1, Q), np.tile(S0, (restarts, 1)), config
    )
    vals = np.where(np.isfinite(vals), vals, -np.inf).reshape(restarts, K)
    best = np.argmax(vals, axis=0)
    pick = best * K + np.arange(K)
    best_mu, best_S, best_val = mu[pick], S[pick], vals[best, np.arange(K)]
    if res.failed or not np.all(np.isfinite(best_val)):
        raise InferenceError(f"latent inference failed: {res.message}", best=(best_mu, best_S, best_val))
    return LatentModeSet(best_mu, view_id, best_S, best_val)


def infer_latent(model, view_id, y_star, restarts=DEFAULT_RESTARTS, seed=0, init=None):
    """Single-point version of :func:`infer_latents`; returns ``(mean, variance)``."""
    y = np.asarray(y_star, dtype=float).reshape(1, -1)
    if init is not None:
        init = (np.reshape(init[0], (1, -1)), np.reshape(init[1], (1, -1)))
    res = infer_latents(model, view_id, y, restarts, seed, init)
    return res.modes[0], res.variances[0]


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


def _shared_index(shared_dims, Q):
    dims = sorted(int(q) for q in shared_dims)
    if not dims:
        raise NoSharedSubspaceError("no shared latent dimensions; the views cannot be matched")
    if dims[0] < 0 or dims[-1] >= Q:
        raise ValueError(f"shared dimensions {dims} outside [0, {Q})")
    return np.array(dims)


def distance_matrix(modes1, modes2, shared_dims):
    """Euclidean distances between view-1 and view-2 modes over ``shared_dims``."""
    a = modes1.modes if isinstance(modes1, LatentModeSet) else np.atleast_2d(modes1)
    b = modes2.modes if isinstance(modes2, LatentModeSet) else np.atleast_2d(modes2)
    if a.shape != b.shape:
        raise ShapeError(f"mode sets differ in shape: {a.shape} vs {b.shape}")
    idx = _shared_index(shared_dims, a.shape[1])
    diff = a[:, None, idx] - b[None, :, idx]
    return DistanceMatrix(np.sqrt((diff * diff).sum(-1)))


def hungarian_assignment(cost):
    """Minimum-cost perfect matching; returns ``(permutation, total_cost)``."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    perm = np.asarray(_kernels.hungarian(np.ascontiguousarray(cost)))
    return perm, float(cost[np.arange(n), perm].sum())


def _shared_dims(model, threshold):
    prof = relevance_profile(model, threshold)
    return prof.shared_dims


def align_nonmyopic(model, Y1_B, Y2_B, threshold=None, restarts=DEFAULT_RESTARTS, seed=0, modes1=None, modes2=None):
    """Infer all unaligned modes in both views and solve the assignment.

    Precomputed :class:`LatentModeSet` objects may be passed as ``modes1`` /
    ``modes2`` to skip the corresponding inference.
    """
    Y1_B = np.atleast_2d(np.asarray(Y1_B, dtype=float))
    Y2_B = np.atleast_2d(np.asarray(Y2_B, dtype=float))
    if Y1_B.shape[0] != Y2_B.shape[0]:
        raise ShapeError("both views need the same number of unaligned points")
    shared = _shared_dims(model, threshold)
    _shared_index(shared, model.q_latent_dim)
    m1 = modes1 if modes1 is not None else infer_latents(model, 1, Y1_B, restarts, seed)
    m2 = modes2 if modes2 is not None else infer_latents(model, 2, Y2_B, restarts, seed)
    D = distance_matrix(m1, m2, shared)
    perm, total = hungarian_assignment(D.values)
    return AlignmentResult(perm, "nonmyopic", total, D, sorted(shared))


def align_myopic(model, Y1_B, stream, threshold=None, restarts=DEFAULT_RESTARTS, seed=0, modes1=None):
    """Greedy streaming matcher.

    View-1 modes are computed up front; each arriving view-2 point is mapped
    to its own mode and paired with the nearest still-unmatched view-1 mode.
    Arrival order defines view-2 indices.
    """
    Y1_B = np.atleast_2d(np.asarray(Y1_B, dtype=float))
    shared = _shared_dims(model, threshold)
    idx = _shared_index(shared, model.q_latent_dim)
    n = Y1_B.shape[0]
    if modes1 is None:
        modes1 = infer_latents(model, 1, Y1_B, restarts, seed)
    pool = modes1.modes[:, idx]
    seen = []
    available = np.ones(n, dtype=bool)
    perm = np.full(n, -1, dtype=np.int64)
    total = 0.0
    arrived = 0
    for j, y in enumerate(stream):
        if arrived == n:
            raise ShapeError(f"stream holds more than {n} points")
        full = infer_latents(model, 2, np.reshape(y, (1, -1)), restarts, seed).modes[0]
        seen.append(full)
        mode = full[idx]
        d = np.sqrt(((pool - mode) ** 2).sum(1))
        d[~available] = np.inf
        i = int(np.argmin(d))  # lowest index wins ties
        perm[i] = j
        available[i] = False
        total += float(d[i])
        arrived += 1
    complete = arrived == n
    if not complete:
        log.warning("stream ended after %d of %d points", arrived, n)
    D = None
    if complete:
        D = distance_matrix(modes1, np.array(seen), shared)
    return AlignmentResult(perm, "myopic", total, D, sorted(shared), complete)
