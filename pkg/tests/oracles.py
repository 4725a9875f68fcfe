"""Independent reference implementations used by the tests.

None of these import the package's kernels; they evaluate the defining
formulas by brute force, quadrature or sampling.
"""
import itertools

import numpy as np


def rbf(x1, x2, sf2, w):
    d = np.asarray(x1, float)[:, None, :] - np.asarray(x2, float)[None, :, :]
    return sf2 * np.exp(-0.5 * (w * d * d).sum(-1))


def discordant_pairs(p):
    p = list(p)
    return sum(1 for i in range(len(p)) for j in range(i + 1, len(p)) if p[i] > p[j])


def brute_tau(p, truth=None):
    p = np.asarray(p)
    n = len(p)
    if truth is None:
        truth = np.arange(n)
    # pair (i, j) is discordant when the two orderings disagree
    bad = 0
    for i in range(n):
        for j in range(i + 1, n):
            if (p[i] - p[j]) * (truth[i] - truth[j]) < 0:
                bad += 1
    return bad / (n * (n - 1) / 2)


def exhaustive_assignment(cost):
    n = cost.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, sum(cost[i, perm[i]] for i in range(n)))
    return best


def mc_psi(mu, S, Z, sf2, w, samples, rng):
    """Monte-Carlo Psi1 (N x M) and Psi2 (M x M) with standard errors."""
    N, Q = mu.shape
    M = Z.shape[0]
    P1 = np.empty((N, M))
    P1_se = np.empty((N, M))
    P2 = np.zeros((M, M))
    P2_var = np.zeros((M, M))
    for n in range(N):
        x = mu[n] + np.sqrt(S[n]) * rng.standard_normal((samples, Q))
        k = rbf(x, Z, sf2, w)  # (samples, M)
        P1[n] = k.mean(0)
        P1_se[n] = k.std(0, ddof=1) / np.sqrt(samples)
        kk = k[:, :, None] * k[:, None, :]
        P2 += kk.mean(0)
        P2_var += kk.var(0, ddof=1) / samples
    return P1, P1_se, P2, np.sqrt(P2_var)


def _gh_expect(f, mu, s, nodes=120):
    # E[f(x)] for x ~ N(mu, s), probabilists' Gauss-Hermite rule
    t, wts = np.polynomial.hermite_e.hermegauss(nodes)
    x = mu + np.sqrt(s) * t
    return (wts * f(x)).sum() / np.sqrt(2.0 * np.pi)


def dense_view_bound_1d(mu, s, Z, sf2, w, noise, Y, jitter=1e-6):
    """Collapsed bound of one view for a 1-D latent, by quadrature.

    ``Y`` must already be centred.  The Gram matrix on ``Z`` carries the same
    ``jitter * sf2`` ridge as the model.
    """
    N, D = Y.shape
    M = Z.shape[0]
    Kuu = sf2 * np.exp(-0.5 * w * (Z[:, None] - Z[None, :]) ** 2) + jitter * sf2 * np.eye(M)
    psi0 = 0.0
    P1 = np.zeros((N, M))
    P2 = np.zeros((M, M))
    for n in range(N):
        psi0 += _gh_expect(lambda x: sf2 + 0 * x, mu[n], s[n])
        for m in range(M):
            P1[n, m] = _gh_expect(lambda x: sf2 * np.exp(-0.5 * w * (x - Z[m]) ** 2), mu[n], s[n])
            for k in range(M):
                P2[m, k] += _gh_expect(
                    lambda x: sf2**2 * np.exp(-0.5 * w * ((x - Z[m]) ** 2 + (x - Z[k]) ** 2)), mu[n], s[n]
                )
    s2 = noise
    _, ldK = np.linalg.slogdet(Kuu)
    _, ldA = np.linalg.slogdet(Kuu + P2 / s2)
    val = D * (
        -0.5 * N * np.log(2 * np.pi * s2)
        + 0.5 * ldK
        - 0.5 * ldA
        - psi0 / (2 * s2)
        + np.trace(np.linalg.solve(Kuu, P2)) / (2 * s2)
    )
    val -= np.trace(Y @ Y.T) / (2 * s2)
    val += np.trace(Y.T @ P1 @ np.linalg.solve(s2 * Kuu + P2, P1.T @ Y)) / (2 * s2)
    return val


def kl_unit_gaussian(mu, s):
    return 0.5 * np.sum(mu**2 + s - np.log(s) - 1.0)


def fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
