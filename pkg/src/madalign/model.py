"""Two-view factorised latent variable model trained on aligned anchors.

Both views share one latent posterior ``q(X)`` over the anchor rows.  Each
view has its own ARD kernel, Gaussian noise and inducing inputs; the
objective is the sum of the two collapsed sparse bounds minus the KL of
``q(X)`` to a unit Gaussian prior.
"""
from copy import deepcopy
from dataclasses import dataclass, field
import json
import logging
import warnings

import numpy as np
from scipy import linalg

from . import kernels as kc
from .errors import AlignmentPreconditionError, ConditioningError, ShapeError
from .kernels import ArdKernelParams, GaussianLatent, InducingInputs
from .optimize import OptimizerConfig, minimize

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.05
CHECKPOINT_VERSION = 1


@dataclass
class ViewModel:
    kernel: ArdKernelParams
    noise_variance: float
    inducing: InducingInputs | None
    offset: np.ndarray  # column means of the anchor data; the GP models Y - offset

    def __post_init__(self):
        self.noise_variance = float(self.noise_variance)
        self.offset = np.asarray(self.offset, dtype=float).ravel()
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        if self.inducing is not None and self.inducing.locations.shape[1] != self.kernel.input_dim:
            raise ShapeError("inducing inputs do not match latent dimensionality")

    @property
    def output_dim(self):
        return self.offset.shape[0]

    @property
    def Z(self):
        return None if self.inducing is None else self.inducing.locations


@dataclass
class MadModel:
    latent: GaussianLatent
    view1: ViewModel
    view2: ViewModel
    q_latent_dim: int
    anchors1: np.ndarray
    anchors2: np.ndarray
    trace: list = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD
    failed: bool = False

    def view(self, view_id):
        if view_id not in (1, 2):
            raise ValueError(f"view_id must be 1 or 2, got {view_id}")
        return self.view1 if view_id == 1 else self.view2

    def anchors(self, view_id):
        return self.anchors1 if view_id == 1 else self.anchors2

    @property
    def num_anchors(self):
        return self.latent.means.shape[0]

    @property
    def final_free_energy(self):
        return self.trace[-1][1] if self.trace else None

    def swapped(self):
        """Same model with the roles of the two views exchanged."""
        m = deepcopy(self)
        m.view1, m.view2 = m.view2, m.view1
        m.anchors1, m.anchors2 = m.anchors2, m.anchors1
        return m


@dataclass
class RelevanceProfile:
    normalized_weights: np.ndarray  # (2, Q)
    shared_dims: set
    private_dims_view1: set
    private_dims_view2: set

    @property
    def off_dims(self):
        Q = self.normalized_weights.shape[1]
        return set(range(Q)) - self.shared_dims - self.private_dims_view1 - self.private_dims_view2


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------


def _cholesky(A, retries=3):
    try:
        return linalg.cholesky(A, lower=True)
    except linalg.LinAlgError:
        pass
    jitter = 1e-6 * max(np.mean(np.diag(A)), 1e-300)
    for _ in range(retries):
        try:
            return linalg.cholesky(A + jitter * np.eye(A.shape[0]), lower=True)
        except linalg.LinAlgError:
            jitter *= 10.0
    raise ConditioningError("matrix not positive definite after jitter escalation")


def _chol_inv(L):
    return linalg.cho_solve((L, True), np.eye(L.shape[0]))


# ---------------------------------------------------------------------------
# Per-view collapsed bound
# ---------------------------------------------------------------------------


def view_bound(view, q, Y, grad=True):
    """Collapsed sparse bound of one view (without the latent KL).

    ``Y`` is the raw view data; the view's offset is removed here.  Returns
    ``(value, grads)`` where ``grads`` holds derivatives with respect to the
    natural parameters (``means``, ``variances``, ``signal_variance``,
    ``weights``, ``noise_variance``, ``Z``), or ``None`` if ``grad`` is False.
    """
    Y = np.asarray(Y, dtype=float) - view.offset
    N, D = Y.shape
    params = view.kernel
    beta = 1.0 / view.noise_variance
    Kuu = kc.inducing_covariance(view.Z, params)
    psi0, P1, P2 = kc.psi_statistics(q, view.Z, params)
    LK = _cholesky(Kuu)
    A = Kuu + beta * P2
    LA = _cholesky(A)
    Kinv = _chol_inv(LK)
    Ainv = _chol_inv(LA)
    C = P1.T @ Y
    E = Ainv @ C
    logdetK = 2.0 * np.log(np.diag(LK)).sum()
    logdetA = 2.0 * np.log(np.diag(LA)).sum()
    trYY = float(np.sum(Y * Y))
    trKP2 = float(np.sum(Kinv * P2))
    fit = float(np.sum(C * E))
    value = (
        D * (-0.5 * N * np.log(2.0 * np.pi / beta) + 0.5 * logdetK - 0.5 * logdetA - 0.5 * beta * psi0 + 0.5 * beta * trKP2)
        - 0.5 * beta * trYY
        + 0.5 * beta**2 * fit
    )
    if not grad:
        return value, None

    GA = -0.5 * D * Ainv - 0.5 * beta**2 * (E @ E.T)
    dK = 0.5 * D * Kinv - 0.5 * D * beta * (Kinv @ P2 @ Kinv) + GA
    dP2 = 0.5 * D * beta * Kinv + beta * GA
    dP1 = beta**2 * (Y @ E.T)
    dpsi0 = -0.5 * D * beta
    dbeta = (
        0.5 * D * N / beta
        - 0.5 * D * psi0
        + 0.5 * D * trKP2
        - 0.5 * trYY
        + beta * fit
        + float(np.sum(GA * P2))
    )
    g = kc.psi_grads(q, view.Z, params, dpsi0, dP1, dP2)
    dZ_k, dvar_k, dw_k = kc.inducing_covariance_grads(view.Z, params, dK)
    grads = {
        "means": g["means"],
        "variances": g["variances"],
        "signal_variance": g["signal_variance"] + dvar_k,
        "weights": g["weights"] + dw_k,
        "noise_variance": -dbeta * beta**2,
        "Z": None if params.kind == "linear" else g["Z"] + dZ_k,
    }
    return value, grads


def free_energy(model, Y1_A, Y2_A, grad=True):
    """Variational lower bound ``F1 + F2 - KL(q(X) || p(X))``.

    Returns ``(value, grads)`` with ``grads = {"latent": {...}, "view1":
    {...}, "view2": {...}}`` in natural parameterisation.
    """
    Y1_A = np.asarray(Y1_A, dtype=float)
    Y2_A = np.asarray(Y2_A, dtype=float)
    n = model.num_anchors
    if Y1_A.shape[0] != n or Y2_A.shape[0] != n:
        raise ShapeError(f"model has {n} anchors, data has {Y1_A.shape[0]} and {Y2_A.shape[0]} rows")
    if Y1_A.shape[1] != model.view1.output_dim or Y2_A.shape[1] != model.view2.output_dim:
        raise ShapeError("data columns do not match the model's views")
    f1, g1 = view_bound(model.view1, model.latent, Y1_A, grad)
    f2, g2 = view_bound(model.view2, model.latent, Y2_A, grad)
    kl = kc.kl_to_prior(model.latent)
    value = f1 + f2 - kl
    if not grad:
        return value, None
    dkl_mu, dkl_S = kc.kl_to_prior_grads(model.latent)
    latent = {
        "means": g1.pop("means") + g2.pop("means") - dkl_mu,
        "variances": g1.pop("variances") + g2.pop("variances") - dkl_S,
    }
    return value, {"latent": latent, "view1": g1, "view2": g2}


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------


def _pca_latent(Y1, Y2, Q):
    Y = np.hstack([Y1, Y2])
    Y = Y - Y.mean(0)
    sd = Y.std(0)
    sd[sd == 0] = 1.0
    Y = Y / sd
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(Y.shape) * np.finfo(float).eps)) if s.size and s[0] > 0 else 0
    X = np.zeros((Y.shape[0], Q))
    k = min(Q, rank)
    if Q > rank:
        warnings.warn(f"Q={Q} exceeds data rank {rank}; padding latent with zero columns", RuntimeWarning, stacklevel=3)
    X[:, :k] = U[:, :k] * s[:k]
    # fix the SVD sign ambiguity so initialisation is reproducible across LAPACKs
    signs = np.sign(X[np.argmax(np.abs(X), axis=0), np.arange(Q)])
    signs[signs == 0] = 1.0
    X *= signs
    std = X.std()
    return X / std if std > 0 else X


def _pick_inducing(X, M, rng):
    uniq = np.unique(X, axis=0)
    if uniq.shape[0] >= M:
        # rows in random order, skipping duplicates
        picked, seen = [], set()
        for i in rng.permutation(X.shape[0]):
            key = X[i].tobytes()
            if key not in seen:
                seen.add(key)
                picked.append(i)
            if len(picked) == M:
                break
        return X[np.array(picked)].copy()
    Z = X[rng.choice(X.shape[0], size=M, replace=True)].copy()
    return Z + 1e-3 * rng.standard_normal(Z.shape)


def initialize(Y1_A, Y2_A, Q, M=None, seed=0, kernel="rbf", threshold=DEFAULT_THRESHOLD):
    """Build an untrained model from aligned anchor observations.

    The latent means are the leading principal components of the standardised
    concatenation ``[Y1_A | Y2_A]``.  ``M`` defaults to ``min(len(Y1_A), 30)``.
    """
    Y1_A = np.atleast_2d(np.asarray(Y1_A, dtype=float))
    Y2_A = np.atleast_2d(np.asarray(Y2_A, dtype=float))
    if Y1_A.shape[0] != Y2_A.shape[0]:
        raise AlignmentPreconditionError(
            f"anchor views must have the same number of rows ({Y1_A.shape[0]} vs {Y2_A.shape[0]})"
        )
    n = Y1_A.shape[0]
    if n < 2:
        raise AlignmentPreconditionError("need at least two anchor pairs")
    if Q < 1:
        raise ValueError("Q must be >= 1")
    if M is None:
        M = min(n, 30)
    if not 1 <= M <= n:
        raise ValueError(f"M must be in [1, {n}], got {M}")
    if not (np.all(np.isfinite(Y1_A)) and np.all(np.isfinite(Y2_A))):
        raise ValueError("anchor data must be finite")

    rng = np.random.default_rng(seed)
    X = _pca_latent(Y1_A, Y2_A, Q)
    latent = GaussianLatent(X, np.full_like(X, 0.5))
    views = []
    for Y in (Y1_A, Y2_A):
        offset = Y.mean(0)
        data_var = float(np.mean((Y - offset) ** 2))
        data_var = data_var if data_var > 0 else 1.0
        params = ArdKernelParams(data_var, np.full(Q, 1.0 / Q), kind=kernel)
        inducing = InducingInputs(_pick_inducing(X, M, rng)) if kernel == "rbf" else None
        views.append(ViewModel(params, 0.1 * data_var, inducing, offset))
    return MadModel(latent, views[0], views[1], Q, Y1_A.copy(), Y2_A.copy(), [], threshold)


# ---------------------------------------------------------------------------
# Parameter vector packing (log space for positive quantities)
# ---------------------------------------------------------------------------

_VIEW_KEYS = ("signal_variance", "weights", "noise_variance", "Z")
_LOG_KEYS = {"signal_variance", "weights", "noise_variance"}
# variances are floor + exp(x) so a collapsing fit cannot underflow them to 0
VARIANCE_FLOOR = 1e-10
_FLOORS = {"noise_variance": VARIANCE_FLOOR}


def _to_log(v, floor=0.0):
    return np.log(np.maximum(v - floor, 1e-300))


def _free_view_keys(view, fixed=()):
    keys = _VIEW_KEYS
    if view.kernel.kind == "linear":
        # sf2 is redundant with the weights of a linear kernel and Z is unused
        keys = ("weights", "noise_variance")
    return tuple(k for k in keys if k not in fixed)


def _view_values(view):
    return {
        "signal_variance": view.kernel.signal_variance,
        "weights": view.kernel.weights,
        "noise_variance": view.noise_variance,
        "Z": view.Z,
    }


def pack(model, fixed=()):
    """Free parameters as one vector; positive quantities in log space.

    ``fixed`` names view parameters (e.g. ``"noise_variance"``) to leave out.
    """
    parts = [model.latent.means.ravel(), _to_log(model.latent.variances, VARIANCE_FLOOR).ravel()]
    for view in (model.view1, model.view2):
        vals = _view_values(view)
        for key in _free_view_keys(view, fixed):
            v = np.atleast_1d(np.asarray(vals[key], dtype=float)).ravel()
            parts.append(_to_log(v, _FLOORS.get(key, 0.0)) if key in _LOG_KEYS else v)
    return np.concatenate(parts)


def unpack(model, vec, fixed=()):
    """Return a copy of ``model`` with free parameters read from ``vec``."""
    m = deepcopy(model)
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = vec[pos : pos + size].reshape(shape)
        pos += size
        return out

    N, Q = model.latent.shape
    m.latent = GaussianLatent.__new__(GaussianLatent)  # skip validation inside the optimiser
    m.latent.means = take((N, Q)).copy()
    m.latent.variances = VARIANCE_FLOOR + np.exp(take((N, Q)))
    for name in ("view1", "view2"):
        view = getattr(m, name)
        for key in _free_view_keys(view, fixed):
            if key == "signal_variance":
                view.kernel.signal_variance = float(np.exp(take((1,)))[0])
            elif key == "weights":
                view.kernel.weights = np.exp(take((Q,)))
            elif key == "noise_variance":
                view.noise_variance = VARIANCE_FLOOR + float(np.exp(take((1,)))[0])
            else:
                view.inducing.locations = take(view.Z.shape).copy()
    return m


def pack_grads(model, grads, fixed=()):
    """Flatten natural-parameter gradients into the layout of :func:`pack`."""
    dlogS = grads["latent"]["variances"] * (model.latent.variances - VARIANCE_FLOOR)
    parts = [grads["latent"]["means"].ravel(), dlogS.ravel()]
    for name in ("view1", "view2"):
        view = getattr(model, name)
        vals = _view_values(view)
        g = grads[name]
        for key in _free_view_keys(view, fixed):
            gv = np.atleast_1d(np.asarray(g[key], dtype=float)).ravel()
            if key in _LOG_KEYS:
                gv = gv * (np.atleast_1d(vals[key]).ravel() - _FLOORS.get(key, 0.0))
            parts.append(gv)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(model, Y1_A, Y2_A, opt=None, warmup_iters=0, warmup_noise_scale=0.1):
    """Maximise the free energy over all free parameters.

    With ``warmup_iters > 0`` a first phase runs with both noise variances
    pinned at ``warmup_noise_scale`` times their current value, which keeps
    the noise from explaining away structure before the latent space has
    settled.  Returns a new model holding the best parameters seen over the
    whole run (the input model included).  The trace gains one entry for the
    starting point and one per optimiser iteration, each recording the
    best-so-far free energy.
    """
    opt = opt or OptimizerConfig()
    if opt.max_iters < 0 or warmup_iters < 0:
        raise ValueError("iteration counts must be >= 0")
    Y1_A = np.asarray(Y1_A, dtype=float)
    Y2_A = np.asarray(Y2_A, dtype=float)
    it0 = model.trace[-1][0] + 1 if model.trace else 0
    out = deepcopy(model)
    out.anchors1, out.anchors2 = Y1_A.copy(), Y2_A.copy()

    def evaluate(m):
        try:
            f, g = free_energy(m, Y1_A, Y2_A)
        except (ConditioningError, FloatingPointError, np.linalg.LinAlgError):
            return -np.inf, None
        return (f, g) if np.isfinite(f) else (-np.inf, None)

    with np.errstate(over="ignore", under="ignore"):
        f0, _ = evaluate(out)
    if not np.isfinite(f0):
        out.failed = True
        log.warning("free energy is not finite at the starting point")
        return out
    out.trace.append((it0, float(f0)))
    if opt.max_iters == 0:
        return out

    best = {"f": f0, "model": out}
    state = {"it": it0, "failed": False}

    def run_phase(start, iters, fixed):
        def objective(vec):
            m = unpack(start, vec, fixed)
            f, g = evaluate(m)
            if g is None:
                return np.inf, np.full_like(vec, np.nan)
            return -f, -pack_grads(m, g, fixed)

        def record(_, f, x):
            state["it"] += 1
            if -f > best["f"]:
                best["f"], best["model"] = -f, unpack(start, x, fixed)
            out.trace.append((state["it"], float(best["f"])))

        phase_opt = OptimizerConfig(**{**opt.__dict__, "max_iters": iters})
        with np.errstate(over="ignore", under="ignore"):
            f_start, _ = evaluate(start)
            if np.isfinite(f_start) and f_start > best["f"]:
                best["f"], best["model"] = f_start, start
            res = minimize(objective, pack(start, fixed), phase_opt, callback=record)
        state["failed"] |= res.failed
        log.info("phase %s: %d iterations, %s", "warm-up" if fixed else "main", res.nit, res.message)
        return unpack(start, res.x, fixed)

    current = out
    if warmup_iters > 0:
        pinned = deepcopy(out)
        for view in (pinned.view1, pinned.view2):
            view.noise_variance *= warmup_noise_scale
        current = run_phase(pinned, warmup_iters, ("noise_variance",))
    run_phase(current, opt.max_iters, ())

    trained = best["model"]
    trained = deepcopy(trained)
    trained.latent = GaussianLatent(trained.latent.means, trained.latent.variances)
    trained.anchors1, trained.anchors2 = out.anchors1, out.anchors2
    trained.trace = out.trace
    trained.failed = state["failed"]
    log.info("free energy %.6g after %d iterations", best["f"], state["it"] - it0)
    return trained


@dataclass
class ModelConfig:
    Q: int = 6
    M: int | None = None  # None: min(num anchors, 30)
    kernel: str = "rbf"
    threshold: float = DEFAULT_THRESHOLD
    warmup_iters: int = 200
    warmup_noise_scale: float = 0.1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        opt = d.pop("optimizer", {}) or {}
        return cls(optimizer=OptimizerConfig(**opt), **d)


def fit(Y1_A, Y2_A, config=None, seed=0):
    """``initialize`` followed by ``train``."""
    config = config or ModelConfig()
    model = initialize(Y1_A, Y2_A, config.Q, config.M, seed=seed, kernel=config.kernel, threshold=config.threshold)
    return train(model, Y1_A, Y2_A, config.optimizer, config.warmup_iters, config.warmup_noise_scale)


# ---------------------------------------------------------------------------
# Relevance
# ---------------------------------------------------------------------------


def normalized_weights(model):
    rows = []
    for view in (model.view1, model.view2):
        w = view.kernel.weights
        top = w.max()
        rows.append(w / top if top > 0 else np.zeros_like(w))
    return np.vstack(rows)


def relevance_profile(model, threshold=None):
    """Split latent dimensions into shared, private and switched-off sets."""
    threshold = model.threshold if threshold is None else threshold
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    W = normalized_weights(model)
    return profile_from_weights(W, threshold)


def profile_from_weights(W, threshold):
    W = np.asarray(W, dtype=float)
    on1 = W[0] > threshold
    on2 = W[1] > threshold
    return RelevanceProfile(
        W,
        {int(q) for q in np.flatnonzero(on1 & on2)},
        {int(q) for q in np.flatnonzero(on1 & ~on2)},
        {int(q) for q in np.flatnonzero(on2 & ~on1)},
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _view_to_dict(view):
    return {
        "kernel": view.kernel.kind,
        "signal_variance": view.kernel.signal_variance,
        "weights": view.kernel.weights.tolist(),
        "noise_variance": view.noise_variance,
        "inducing": None if view.Z is None else view.Z.tolist(),
        "offset": view.offset.tolist(),
    }


def _view_from_dict(d):
    params = ArdKernelParams(d["signal_variance"], np.array(d["weights"], dtype=float), kind=d["kernel"])
    inducing = None if d["inducing"] is None else InducingInputs(np.array(d["inducing"], dtype=float))
    return ViewModel(params, d["noise_variance"], inducing, np.array(d["offset"], dtype=float))


def model_to_dict(model):
    M = kc.num_inducing(model.view1.Z, model.view1.kernel)
    return {
        "schema_version": CHECKPOINT_VERSION,
        "Q": model.q_latent_dim,
        "M": M,
        "threshold": model.threshold,
        "failed": model.failed,
        "latent": {"means": model.latent.means.tolist(), "variances": model.latent.variances.tolist()},
        "view1": _view_to_dict(model.view1),
        "view2": _view_to_dict(model.view2),
        "anchors1": model.anchors1.tolist(),
        "anchors2": model.anchors2.tolist(),
        "trace": [[int(i), float(f)] for i, f in model.trace],
    }


def model_from_dict(d):
    Q = int(d["Q"])
    latent = GaussianLatent(np.array(d["latent"]["means"], dtype=float).reshape(-1, Q),
                            np.array(d["latent"]["variances"], dtype=float).reshape(-1, Q))
    n = latent.means.shape[0]
    v1 = _view_from_dict(d["view1"])
    v2 = _view_from_dict(d["view2"])
    return MadModel(
        latent,
        v1,
        v2,
        Q,
        np.array(d["anchors1"], dtype=float).reshape(n, v1.output_dim),
        np.array(d["anchors2"], dtype=float).reshape(n, v2.output_dim),
        [(int(i), float(f)) for i, f in d["trace"]],
        float(d["threshold"]),
        bool(d.get("failed", False)),
    )


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
