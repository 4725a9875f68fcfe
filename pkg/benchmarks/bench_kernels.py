"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeats 5]

Both variants are imported directly, so the MADALIGN_DISABLE_NUMBA flag does
not matter here.  Each kernel is warmed up once (JIT compile) before timing.
"""
import argparse
import timeit

import numpy as np

from madalign import _kernels as K


def cases(rng):
    N, M, Q = 112, 30, 6
    mu = rng.standard_normal((N, Q))
    S = rng.uniform(0.01, 0.5, (N, Q))
    Z = rng.standard_normal((M, Q))
    w = rng.uniform(0.1, 2.0, Q)
    G = rng.standard_normal((M, M))
    G = G + G.T
    cost = rng.random((200, 200))
    perm = rng.permutation(100_000)
    return {
        "hungarian n=200": (K._hungarian_np, K._hungarian_nb, (cost,)),
        "inversions n=1e5": (K._count_inversions_np, K._count_inversions_nb, (perm,)),
        "psi2 per-point N=112 M=30 Q=6": (K._rbf_psi2n_np, K._rbf_psi2n_nb, (mu, S, Z, 1.3, w)),
        "psi2 grads N=112 M=30 Q=6": (K._rbf_psi2_grads_np, K._rbf_psi2_grads_nb, (mu, S, Z, 1.3, w, G)),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  agree")
    for name, (f_np, f_nb, inputs) in cases(rng).items():
        f_nb(*inputs)  # compile
        agree = _same(f_np(*inputs), f_nb(*inputs))
        t_np = min(timeit.repeat(lambda: f_np(*inputs), number=1, repeat=args.repeats)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=1, repeat=args.repeats)) * 1e3
        print(f"{name:34s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.1f}x  {agree}")


if __name__ == "__main__":
    main()
