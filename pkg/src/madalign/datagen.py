"""Synthetic two-view data, view splitting, anchor splits and CSV matrix I/O."""
from dataclasses import asdict, dataclass, field
import csv
import json
import os

import numpy as np

from .errors import ParseError, ShapeError


@dataclass
class ToyConfig:
    n_points: int = 100
    shared_dims: int = 2
    private_dims_per_view: int = 1
    output_dim: int = 20
    mapping: str = "linear"  # or "gp_draw"
    noise_sd: float = 0.1
    frequencies: list = field(default_factory=list)  # empty: 1, 2, 3, ...
    seed: int = 0
    time_span: float = float(np.pi)

    def __post_init__(self):
        k = self.latent_dim
        if not self.frequencies:
            self.frequencies = [float(i + 1) for i in range(k)]
        self.frequencies = [float(f) for f in self.frequencies]
        if len(self.frequencies) != k:
            raise ValueError(f"need {k} frequencies, got {len(self.frequencies)}")
        if len(set(self.frequencies)) != k or min(self.frequencies) <= 0:
            raise ValueError("frequencies must be positive and pairwise distinct")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if self.mapping not in ("linear", "gp_draw"):
            raise ValueError(f"unknown mapping {self.mapping!r}")
        if self.n_points < 2 or self.output_dim < 1 or self.shared_dims < 0 or self.private_dims_per_view < 0:
            raise ValueError("invalid toy dimensions")

    @property
    def latent_dim(self):
        return self.shared_dims + 2 * self.private_dims_per_view

    def view_columns(self, view_id):
        """Columns of the generating latent that feed view ``view_id``."""
        s, p = self.shared_dims, self.private_dims_per_view
        own = s + (view_id - 1) * p
        return list(range(s)) + list(range(own, own + p))


@dataclass
class ToyDataset:
    view1: np.ndarray
    view2: np.ndarray
    generating_latent: np.ndarray  # columns: shared, private view 1, private view 2
    config: ToyConfig

    @property
    def ground_truth(self):
        return np.arange(self.view1.shape[0])


def sinusoid_latent(n, frequencies, span=np.pi):
    """Columns ``cos(f * t)`` on ``n`` evenly spaced points of ``[0, span]``.

    With ``span = pi`` and integer ``f`` the columns are orthogonal and the
    lowest-frequency column is monotone, so the trajectory never revisits a
    point.
    """
    t = np.linspace(0.0, span, n)
    return np.column_stack([np.cos(f * t) for f in frequencies])


def _gp_draw(X, out_dim, rng, lengthscale=1.0):
    # sample on unique rows so identical inputs get identical outputs
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    d2 = ((uniq[:, None, :] - uniq[None, :, :]) ** 2).sum(-1)
    K = np.exp(-0.5 * d2 / lengthscale**2)
    vals, vecs = np.linalg.eigh(K)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    F = root @ rng.standard_normal((uniq.shape[0], out_dim))
    return F[np.asarray(inverse).ravel()]


def generate_toy(cfg):
    """Two views generated from sinusoidal shared and private latent columns."""
    rng = np.random.default_rng(cfg.seed)
    X = sinusoid_latent(cfg.n_points, cfg.frequencies, cfg.time_span)
    if cfg.noise_sd > 0:
        X = X + cfg.noise_sd * rng.standard_normal(X.shape)
    views = []
    for view_id in (1, 2):
        Xv = X[:, cfg.view_columns(view_id)]
        if cfg.mapping == "linear":
            F = Xv @ rng.standard_normal((Xv.shape[1], cfg.output_dim))
        else:
            F = _gp_draw(Xv, cfg.output_dim, rng)
        views.append(F)
    if cfg.noise_sd > 0:
        views = [F + cfg.noise_sd * rng.standard_normal(F.shape) for F in views]
    return ToyDataset(views[0], views[1], X, cfg)


def split_views(Y, rule="half_columns", image_shape=None):
    """Split one matrix into two views.

    ``half_columns`` gives the first ``ceil(D/2)`` columns to view 1.
    ``pixel_halves`` treats each row as a row-major ``image_shape`` image and
    gives the top half of the pixel rows to view 1.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    D = Y.shape[1]
    if D < 2:
        raise ShapeError("need at least two columns to split")
    if rule == "half_columns":
        k = (D + 1) // 2
        return Y[:, :k].copy(), Y[:, k:].copy()
    if rule == "pixel_halves":
        if image_shape is None:
            raise ValueError("pixel_halves needs image_shape=(rows, cols)")
        rows, cols = image_shape
        if rows * cols != D:
            raise ShapeError(f"{D} columns cannot hold {rows}x{cols} images")
        k = ((rows + 1) // 2) * cols
        return Y[:, :k].copy(), Y[:, k:].copy()
    raise ValueError(f"unknown split rule {rule!r}")


def anchor_split(n, n_init, strategy="random", seed=0):
    """Return sorted index arrays ``(A, B)`` partitioning ``range(n)``."""
    if not 0 < n_init < n:
        raise ValueError(f"n_init must satisfy 0 < n_init < n (got n_init={n_init}, n={n})")
    if strategy == "prefix":
        A = np.arange(n_init)
    elif strategy == "random":
        A = np.sort(np.random.default_rng(seed).choice(n, size=n_init, replace=False))
    else:
        raise ValueError(f"unknown anchor strategy {strategy!r}")
    B = np.setdiff1d(np.arange(n), A)
    return A, B


def save_matrix(matrix, path, header=None):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if header is not None:
            writer.writerow(header)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def load_matrix(path, has_header=False):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, record in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not record or all(not f.strip() for f in record):
                continue
            try:
                vals = []
                for col, field_ in enumerate(record, start=1):
                    vals.append(float(field_))
            except ValueError:
                raise ParseError(f"{path}: row {lineno}, column {col}: not a number: {field_!r}") from None
            if rows and len(vals) != len(rows[0]):
                raise ParseError(f"{path}: row {lineno} has {len(vals)} fields, expected {len(rows[0])}")
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def save_bundle(directory, view1, view2, meta):
    """Write ``view1.csv``, ``view2.csv`` and ``meta.json`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    save_matrix(view1, os.path.join(directory, "view1.csv"))
    save_matrix(view2, os.path.join(directory, "view2.csv"))
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_bundle(directory, has_header=False):
    """Return ``(view1, view2, meta)`` from a bundle directory."""
    meta_path = os.path.join(directory, "meta.json")
    meta = {}
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    view1 = load_matrix(os.path.join(directory, "view1.csv"), has_header)
    view2 = load_matrix(os.path.join(directory, "view2.csv"), has_header)
    return view1, view2, meta


def toy_bundle_meta(ds):
    return {"config": asdict(ds.config), "ground_truth": ds.ground_truth.tolist()}
