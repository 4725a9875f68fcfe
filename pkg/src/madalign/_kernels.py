"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names at the bottom of the module are bound to one of the two
implementations according to :data:`madalign._accel.USE_NUMBA`.  Both
variants are always importable (``*_nb`` / ``*_np``) so tests and the
benchmark can compare them directly.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Linear assignment (shortest augmenting path form of the Hungarian method)
# ---------------------------------------------------------------------------


def _hungarian_np(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[p[1:] - 1] = np.arange(n)
    return perm


@njit
def _hungarian_nb(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = np.inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm


# ---------------------------------------------------------------------------
# Inversion counting
# ---------------------------------------------------------------------------


def _count_inversions_np(a):
    # Bottom-up merge sort, one vectorised pass per level.  Rows of the
    # reshaped array are (sorted left half | sorted right half); values are
    # offset per row so one global searchsorted handles every block.
    a = np.asarray(a, dtype=np.int64)
    n = a.shape[0]
    if n < 2:
        return 0
    size = 1
    while size < n:
        size *= 2
    pad = int(a.max()) + 1
    work = np.full(size, pad, dtype=np.int64)
    work[:n] = a
    span = pad + 1
    total = 0
    half = 1
    while half < size:
        rows = work.reshape(-1, 2 * half)
        left = rows[:, :half]
        right = rows[:, half:]
        offset = (np.arange(rows.shape[0], dtype=np.int64) * span)[:, None]
        flat_left = (left + offset).ravel()
        pos = np.searchsorted(flat_left, (right + offset).ravel(), side="right")
        row_end = (np.arange(rows.shape[0], dtype=np.int64) + 1) * half
        total += int((np.repeat(row_end, half) - pos).sum())
        work = np.sort(rows, axis=1).ravel()
        half *= 2
    return total


@njit
def _count_inversions_nb(a):
    n = a.shape[0]
    src = a.astype(np.int64).copy()
    dst = np.empty_like(src)
    total = 0
    width = 1
    while width < n:
        lo = 0
        while lo < n:
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if src[i] <= src[j]:
                    dst[k] = src[i]
                    i += 1
                else:
                    dst[k] = src[j]
                    total += mid - i
                    j += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
            lo += 2 * width
        src, dst = dst, src
        width *= 2
    return total


# ---------------------------------------------------------------------------
# Second psi statistic of the ARD exponentiated-quadratic kernel
# ---------------------------------------------------------------------------


def _rbf_psi2n_np(mu, S, Z, variance, w):
    """Per-point Psi2 tensor, shape (N, M, M)."""
    dz = Z[:, None, :] - Z[None, :, :]
    zbar = 0.5 * (Z[:, None, :] + Z[None, :, :])
    den = 2.0 * w * S + 1.0  # (N, Q)
    e = mu[:, None, None, :] - zbar[None]
    expo = -0.25 * (w * dz * dz).sum(-1)[None] - (w * e * e / den[:, None, None, :]).sum(-1)
    logc = -0.5 * np.log(den).sum(-1)
    return variance**2 * np.exp(expo + logc[:, None, None])


def _rbf_psi2_grads_np(mu, S, Z, variance, w, G):
    """Gradients of ``sum(G * Psi2)`` w.r.t. (mu, S, Z, variance, w).

    Also returns ``wsum[n] = sum(G * Psi2_n)``, the per-point contributions.
    """
    dz = Z[:, None, :] - Z[None, :, :]
    zbar = 0.5 * (Z[:, None, :] + Z[None, :, :])
    den = 2.0 * w * S + 1.0
    e = mu[:, None, None, :] - zbar[None]
    deni = 1.0 / den[:, None, None, :]
    expo = -0.25 * (w * dz * dz).sum(-1)[None] - (w * e * e * deni).sum(-1)
    logc = -0.5 * np.log(den).sum(-1)
    T = G[None] * variance**2 * np.exp(expo + logc[:, None, None])  # (N, M, M)
    Tq = T[..., None]
    we_d = w * e * deni  # (N, M, M, Q)
    wsum = T.sum((1, 2))
    dmu = -2.0 * (Tq * we_d).sum((1, 2))
    dS = (wsum[:, None] * (-w / den)) + 2.0 * (Tq * we_d * we_d).sum((1, 2))
    dw = (
        -(wsum[:, None] * S / den).sum(0)
        - 0.25 * (T.sum(0)[..., None] * dz * dz).sum((0, 1))
        - (Tq * e * e * deni * deni).sum((0, 1, 2))
    )
    half_wdz = 0.5 * w * dz  # (M, M, Q)
    dZ = (Tq * (we_d - half_wdz[None])).sum((0, 2)) + (Tq * (we_d + half_wdz[None])).sum((0, 1))
    dvar = 2.0 * T.sum() / variance
    return dmu, dS, dZ, dvar, dw, wsum


@njit
def _rbf_psi2n_nb(mu, S, Z, variance, w):
    N, Q = mu.shape
    M = Z.shape[0]
    out = np.empty((N, M, M))
    v2 = variance * variance
    for n in range(N):
        logc = 0.0
        for q in range(Q):
            logc -= 0.5 * np.log(2.0 * w[q] * S[n, q] + 1.0)
        for m in range(M):
            for k in range(m, M):
                acc = logc
                for q in range(Q):
                    den = 2.0 * w[q] * S[n, q] + 1.0
                    d = Z[m, q] - Z[k, q]
                    e = mu[n, q] - 0.5 * (Z[m, q] + Z[k, q])
                    acc -= 0.25 * w[q] * d * d + w[q] * e * e / den
                val = v2 * np.exp(acc)
                out[n, m, k] = val
                out[n, k, m] = val
    return out


@njit
def _rbf_psi2_grads_nb(mu, S, Z, variance, w, G):
    N, Q = mu.shape
    M = Z.shape[0]
    dmu = np.zeros((N, Q))
    dS = np.zeros((N, Q))
    dZ = np.zeros((M, Q))
    dw = np.zeros(Q)
    wsum = np.zeros(N)
    v2 = variance * variance
    # Psi2_n is symmetric, so visit m <= k with G folded onto the upper triangle
    npair = M * (M + 1) // 2
    pm = np.empty(npair, dtype=np.int64)
    pk = np.empty(npair, dtype=np.int64)
    pg = np.empty(npair)
    pc = np.empty(npair)
    dz = np.empty((npair, Q))
    zb = np.empty((npair, Q))
    p = 0
    for m in range(M):
        for k in range(m, M):
            pm[p] = m
            pk[p] = k
            pg[p] = G[m, k] if m == k else G[m, k] + G[k, m]
            c = 0.0
            for q in range(Q):
                d = Z[m, q] - Z[k, q]
                dz[p, q] = d
                zb[p, q] = 0.5 * (Z[m, q] + Z[k, q])
                c += 0.25 * w[q] * d * d
            pc[p] = c
            p += 1
    iden = np.empty(Q)
    e = np.empty(Q)
    for n in range(N):
        logc = 0.0
        for q in range(Q):
            den = 2.0 * w[q] * S[n, q] + 1.0
            iden[q] = 1.0 / den
            logc -= 0.5 * np.log(den)
        for p in range(npair):
            g = pg[p]
            if g == 0.0:
                continue
            acc = logc - pc[p]
            for q in range(Q):
                e[q] = mu[n, q] - zb[p, q]
                acc -= w[q] * e[q] * e[q] * iden[q]
            t = g * v2 * np.exp(acc)
            wsum[n] += t
            m = pm[p]
            k = pk[p]
            for q in range(Q):
                wed = w[q] * e[q] * iden[q]
                d = dz[p, q]
                dmu[n, q] -= 2.0 * t * wed
                dS[n, q] += t * (2.0 * wed * wed - w[q] * iden[q])
                dw[q] -= t * (S[n, q] * iden[q] + 0.25 * d * d + e[q] * e[q] * iden[q] * iden[q])
                dZ[m, q] += t * (wed - 0.5 * w[q] * d)
                dZ[k, q] += t * (wed + 0.5 * w[q] * d)
    tsum = 0.0
    for n in range(N):
        tsum += wsum[n]
    return dmu, dS, dZ, 2.0 * tsum / variance, dw, wsum


if USE_NUMBA:
    hungarian = _hungarian_nb
    count_inversions = _count_inversions_nb
    rbf_psi2n = _rbf_psi2n_nb
    rbf_psi2_grads = _rbf_psi2_grads_nb
else:
    hungarian = _hungarian_np
    count_inversions = _count_inversions_np
    rbf_psi2n = _rbf_psi2n_np
    rbf_psi2_grads = _rbf_psi2_grads_np
