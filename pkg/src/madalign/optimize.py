"""Limited-memory BFGS with a backtracking line search.

Minimises ``f``.  Steps that produce a non-finite value or fail the Armijo
condition are shrunk, so the accepted iterates decrease monotonically and the
best point seen is always returned.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    max_iters: int = 500
    memory: int = 10
    rtol: float = 1e-6
    patience: int = 10
    gtol: float = 1e-8
    armijo: float = 1e-4
    max_backtracks: int = 40


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nit: int
    history: list = field(default_factory=list)  # best-so-far objective per iteration
    converged: bool = False
    failed: bool = False
    message: str = ""


def minimize(fun_and_grad, x0, config=None, callback=None):
    """Run L-BFGS from ``x0``.

    :param fun_and_grad: callable returning ``(value, gradient)``
    :param callback: optional ``callback(iteration, value, x)`` per accepted step
    """
    cfg = config or OptimizerConfig()
    x = np.array(x0, dtype=float)
    f, g = fun_and_grad(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return OptimizeResult(x, f, 0, [], failed=True, message="non-finite objective at start")
    history = [f]
    s_hist, y_hist = [], []
    converged = False
    message = "max_iters reached"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        d = -_two_loop(g, s_hist, y_hist)
        slope = float(g @ d)
        if slope >= 0:  # not a descent direction; restart memory
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = -float(g @ g)
        if not s_hist:
            d = d / max(1.0, np.linalg.norm(d))
            slope = float(g @ d)
        step = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            x_new = x + step * d
            f_new, g_new = fun_and_grad(x_new)
            if np.isfinite(f_new) and np.all(np.isfinite(g_new)) and f_new <= f + cfg.armijo * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            message = "line search failed"
            converged = True
            break
        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * float(yv @ yv):
            s_hist.append(s)
            y_hist.append(yv)
            if len(s_hist) > cfg.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if callback is not None:
            callback(it, f, x)
        if np.max(np.abs(g)) < cfg.gtol:
            converged = True
            message = "gradient tolerance reached"
            break
        if len(history) > cfg.patience:
            ref = history[-cfg.patience - 1]
            if abs(ref - f) <= cfg.rtol * max(abs(ref), 1.0):
                converged = True
                message = "relative change below tolerance"
                break
    log.debug("lbfgs stop after %d iterations: %s (f=%.6g)", it, message, f)
    return OptimizeResult(x, f, it, history, converged=converged, message=message)


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((rho, a))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q
