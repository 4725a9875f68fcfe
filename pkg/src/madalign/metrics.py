"""Permutation distances and the mis-alignment sensitivity curve."""
from dataclasses import dataclass, field
import csv
import logging

import numpy as np
from scipy import stats

from . import _kernels
from .errors import MadError

log = logging.getLogger(__name__)


def as_permutation(p):
    p = np.asarray(p)
    if p.ndim != 1 or not np.issubdtype(p.dtype, np.integer):
        if p.ndim == 1 and np.all(np.equal(np.mod(p, 1), 0)):
            p = p.astype(np.int64)
        else:
            raise ValueError("permutation must be a 1-D integer vector")
    if not np.array_equal(np.sort(p), np.arange(p.shape[0])):
        raise ValueError("not a bijection on {0..n-1}")
    return p.astype(np.int64)


def inverse_permutation(p):
    p = as_permutation(p)
    inv = np.empty_like(p)
    inv[p] = np.arange(p.shape[0])
    return inv


def count_inversions(p):
    return int(_kernels.count_inversions(np.ascontiguousarray(p, dtype=np.int64)))


def kendall_tau_distance(p, truth=None):
    """Fraction of discordant pairs, 0 for identical orderings, 1 for reversal.

    With ``truth`` given, pairs are compared against that permutation instead
    of the identity.
    """
    p = as_permutation(p)
    n = p.shape[0]
    if n < 2:
        raise ValueError("need n >= 2")
    if truth is not None:
        truth = as_permutation(truth)
        if truth.shape != p.shape:
            raise ValueError("permutation lengths differ")
        p = p[np.argsort(truth, kind="stable")]
    return count_inversions(p) / (n * (n - 1) / 2)


def generate_misalignment(n, num_swaps, seed=0):
    """Identity permutation scrambled by ``num_swaps`` random transpositions."""
    if n < 2:
        raise ValueError("need n >= 2")
    if num_swaps < 0:
        raise ValueError("num_swaps must be non-negative")
    rng = np.random.default_rng(seed)
    p = np.arange(n)
    for _ in range(num_swaps):
        i, j = rng.choice(n, size=2, replace=False)
        p[i], p[j] = p[j], p[i]
    return p


@dataclass
class MisalignmentCurve:
    points: list = field(default_factory=list)  # (kendall_tau, free_energy), sorted by tau
    swaps: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)  # swap level -> message
    traces: dict = field(default_factory=dict)  # swap level -> best-so-far free energies

    def spearman(self):
        pts = [(t, f) for t, f in self.points if np.isfinite(f)]
        if len(pts) < 3:
            return float("nan")
        taus, fes = zip(*pts)
        return float(stats.spearmanr(taus, fes)[0])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kendall_tau", "free_energy"])
            for tau, fe in self.points:
                writer.writerow([repr(float(tau)), repr(float(fe))])


def misalignment_curve(toy_config, swap_levels, model_config=None, seed=0):
    """Free energy of models trained on increasingly mis-aligned pairs.

    Every level shuffles the rows of view 2 with
    :func:`generate_misalignment` and trains a fresh model with the same seed
    and configuration.  Level 0 is always included.
    """
    from .datagen import generate_toy
    from .model import ModelConfig, fit

    levels = [int(k) for k in swap_levels]
    if levels != sorted(levels):
        raise ValueError("swap_levels must be sorted ascending")
    if not levels or levels[0] != 0:
        levels = [0] + [k for k in levels if k != 0]
    model_config = model_config or ModelConfig()
    ds = generate_toy(toy_config)
    n = ds.view1.shape[0]
    rows = []
    curve = MisalignmentCurve()
    for k in levels:
        perm = generate_misalignment(n, k, seed)
        tau = kendall_tau_distance(perm)
        try:
            model = fit(ds.view1, ds.view2[perm], model_config, seed=seed)
            fe = model.final_free_energy
            curve.traces[k] = [f for _, f in model.trace]
        except (MadError, np.linalg.LinAlgError) as exc:
            log.warning("curve level %d failed: %s", k, exc)
            curve.errors[k] = str(exc)
            fe = float("nan")
        rows.append((tau, k, fe))
    rows.sort(key=lambda r: (r[0], r[1]))
    curve.points = [(t, f) for t, _, f in rows]
    curve.swaps = [k for _, k, _ in rows]
    return curve
