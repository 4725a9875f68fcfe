"""Command-line entry point: ``madalign <subcommand> [options]``.

Exit codes: 0 success, 2 usage/config/missing input, 3 numeric failure.
"""
import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import align as al
from . import datagen as dg
from . import metrics as mt
from . import model as mm
from .errors import ConditioningError, InferenceError, MadError, NumericDomainError, ParseError

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("madalign")


class UsageError(Exception):
    """Bad arguments, unreadable config or missing upstream artifact."""


class NumericFailure(Exception):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or {}


NUMERIC_ERRORS = (ConditioningError, InferenceError, NumericDomainError, FloatingPointError, np.linalg.LinAlgError)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    dataset: dict
    n_init: int
    seed: int = 0
    anchors: dict = field(default_factory=lambda: {"strategy": "random"})
    model: dict = field(default_factory=dict)
    aligner: dict = field(default_factory=lambda: {"method": "nonmyopic"})
    output_dir: str | None = None
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d, base_dir=".", seed=None):
        if not isinstance(d, dict):
            raise UsageError("config must be a JSON object")
        known = {"dataset", "n_init", "seed", "anchors", "model", "aligner", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in d or "n_init" not in d:
            raise UsageError("config needs 'dataset' and 'n_init'")
        cfg = cls(**{k: d[k] for k in known if k in d}, base_dir=base_dir)
        if seed is not None:
            cfg.seed = seed
        cfg.anchors = dict(cfg.anchors or {})
        cfg.aligner = dict(cfg.aligner or {})
        if cfg.aligner.get("method", "nonmyopic") not in ("myopic", "nonmyopic"):
            raise UsageError(f"unknown aligner method {cfg.aligner.get('method')!r}")
        if not isinstance(cfg.n_init, int) or cfg.n_init < 1:
            raise UsageError("n_init must be a positive integer")
        cfg.model_config()  # validate early
        return cfg

    def model_config(self):
        try:
            return mm.ModelConfig.from_dict(self.model)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad model config: {exc}") from None

    def toy_config(self):
        toy = self.dataset.get("toy")
        if toy is None:
            return None
        toy = dict(toy)
        toy.setdefault("seed", self.seed)
        try:
            return dg.ToyConfig(**toy)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad toy config: {exc}") from None

    @property
    def anchor_seed(self):
        return int(self.anchors.get("seed", self.seed))

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def echo(self):
        d = asdict(self)
        d.pop("base_dir")
        d.pop("output_dir")
        return d


def _read_json(path, what="file"):
    if not os.path.exists(path):
        raise UsageError(f"missing {what}: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from None


def load_experiment_config(path, seed=None):
    if path is None:
        raise UsageError("--config is required")
    return ExperimentConfig.from_dict(_read_json(path, "config"), os.path.dirname(os.path.abspath(path)), seed)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def _load_csv(path, has_header):
    if not os.path.exists(path):
        raise UsageError(f"missing input file: {path}")
    return dg.load_matrix(path, has_header)


def _truth_from(source, n, cfg):
    if source is None:
        return None
    if source == "identity":
        return np.arange(n)
    data = _read_json(cfg.resolve(source), "ground truth")
    if isinstance(data, dict):
        data = data.get("ground_truth", data.get("permutation"))
    return mt.as_permutation(data)


def load_dataset(cfg, has_header=False):
    """Return ``(view1, view2, truth, meta)`` for the configured dataset."""
    ds = cfg.dataset
    if "toy" in ds:
        toy = dg.generate_toy(cfg.toy_config())
        return toy.view1, toy.view2, toy.ground_truth, dg.toy_bundle_meta(toy)
    if "bundle" in ds:
        return load_bundle(cfg.resolve(ds["bundle"]), has_header)
    if "files" in ds:
        files = ds["files"]
        if "matrix" in files:
            Y = _load_csv(cfg.resolve(files["matrix"]), has_header)
            shape = files.get("image_shape")
            v1, v2 = dg.split_views(Y, files.get("split", "half_columns"), tuple(shape) if shape else None)
        else:
            v1 = _load_csv(cfg.resolve(files["view1"]), has_header)
            v2 = _load_csv(cfg.resolve(files["view2"]), has_header)
        truth = _truth_from(ds.get("ground_truth", "identity"), v1.shape[0], cfg)
        meta = {"files": files, "ground_truth": None if truth is None else truth.tolist()}
        return v1, v2, truth, meta
    raise UsageError("dataset needs one of 'toy', 'bundle' or 'files'")


def load_bundle(directory, has_header=False):
    for name in ("view1.csv", "view2.csv"):
        p = os.path.join(directory, name)
        if not os.path.exists(p):
            raise UsageError(f"missing dataset file: {p}")
    v1, v2, meta = dg.load_bundle(directory, has_header)
    truth = meta.get("ground_truth")
    return v1, v2, None if truth is None else np.asarray(truth, dtype=np.int64), meta


def _check_views(v1, v2, n_init):
    if v1.shape[0] != v2.shape[0]:
        raise UsageError(f"views have different row counts ({v1.shape[0]} vs {v2.shape[0]})")
    if not n_init < v1.shape[0]:
        raise UsageError(f"n_init={n_init} must be smaller than the number of points n={v1.shape[0]}")


def truth_on_unaligned(truth, B):
    """Ground-truth permutation re-indexed to positions within ``B``."""
    if truth is None:
        return None
    pos = {int(b): i for i, b in enumerate(B)}
    try:
        return np.array([pos[int(truth[b])] for b in B], dtype=np.int64)
    except KeyError:
        raise UsageError("ground truth maps unaligned points onto anchors") from None


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train(cfg, v1, v2):
    A, B = dg.anchor_split(v1.shape[0], cfg.n_init, cfg.anchors.get("strategy", "random"), cfg.anchor_seed)
    model = mm.fit(v1[A], v2[A], cfg.model_config(), seed=cfg.seed)
    if model.failed:
        raise NumericFailure("training hit a non-finite free energy", {"final_free_energy": model.final_free_energy})
    return model, A, B


def _align(cfg, model, v1, v2, B, method=None):
    method = method or cfg.aligner.get("method", "nonmyopic")
    restarts = int(cfg.aligner.get("restarts", al.DEFAULT_RESTARTS))
    threshold = cfg.model_config().threshold
    if method == "nonmyopic":
        return al.align_nonmyopic(model, v1[B], v2[B], threshold, restarts, cfg.seed)
    if method == "myopic":
        return al.align_myopic(model, v1[B], iter(v2[B]), threshold, restarts, cfg.seed)
    raise UsageError(f"unknown aligner method {method!r}")


def _alignment_doc(res, B, truth_B):
    doc = res.to_dict()
    doc["schema_version"] = SCHEMA_VERSION
    doc["unaligned_indices"] = [int(b) for b in B]
    doc["ground_truth"] = None if truth_B is None else truth_B.tolist()
    return doc


def _score(perm, truth_B):
    if truth_B is None or np.any(np.asarray(perm) < 0):
        return None
    return mt.kendall_tau_distance(perm, truth_B)


def _profile_summary(model):
    prof = mm.relevance_profile(model)
    return {
        "shared_dims": sorted(int(q) for q in prof.shared_dims),
        "num_shared_dims": len(prof.shared_dims),
        "num_private_dims": {"view1": len(prof.private_dims_view1), "view2": len(prof.private_dims_view2)},
    }


def run_experiment(cfg, out, has_header=False):
    """Generate/load, split, train, align and score.  Returns the report dict."""
    timings = {}
    t0 = time.perf_counter()
    v1, v2, truth, _ = load_dataset(cfg, has_header)
    _check_views(v1, v2, cfg.n_init)
    timings["data"] = time.perf_counter() - t0
    os.makedirs(out, exist_ok=True)
    report = {
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "n": int(v1.shape[0]),
        "n_init": cfg.n_init,
        "method": cfg.aligner.get("method", "nonmyopic"),
        "config": cfg.echo(),
        "timings": timings,
    }
    try:
        t0 = time.perf_counter()
        model, A, B = _train(cfg, v1, v2)
        timings["train"] = time.perf_counter() - t0
        mm.save_model(model, os.path.join(out, "model.json"))
        report["final_free_energy"] = model.final_free_energy
        report.update(_profile_summary(model))
        report["artifacts"] = {"model": "model.json"}
        t0 = time.perf_counter()
        res = _align(cfg, model, v1, v2, B)
        timings["align"] = time.perf_counter() - t0
    except NumericFailure as exc:
        report.update(exc.partial)
        return _numeric_failure(report, out, exc)
    except NUMERIC_ERRORS as exc:
        return _numeric_failure(report, out, exc)
    truth_B = truth_on_unaligned(truth, B)
    if res.distance_matrix is not None:
        res.distance_matrix.to_csv(os.path.join(out, "distance_matrix.csv"))
        report["artifacts"]["distance_matrix"] = "distance_matrix.csv"
    _write_json(os.path.join(out, "alignment.json"), _alignment_doc(res, B, truth_B))
    report["artifacts"]["alignment"] = "alignment.json"
    report["permutation"] = [int(j) for j in res.permutation]
    report["total_cost"] = float(res.total_cost)
    tau = _score(res.permutation, truth_B)
    if tau is not None:
        report["kendall_tau"] = tau
    _write_json(os.path.join(out, "report.json"), report)
    return report


def _numeric_failure(report, out, exc):
    report["status"] = "numeric_failure"
    report["error"] = str(exc)
    _write_json(os.path.join(out, "report.json"), report)
    raise NumericFailure(str(exc), report)


@dataclass
class CurveConfig:
    toy: dict
    swap_levels: list
    model: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_dict(cls, d, seed=None):
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise UsageError(f"bad curve config: {exc}") from None
        if seed is not None:
            cfg.seed = seed
        levels = [int(k) for k in cfg.swap_levels]
        if levels != sorted(levels) or any(k < 0 for k in levels):
            raise UsageError("swap_levels must be non-negative and ascending")
        return cfg

    def toy_config(self):
        toy = dict(self.toy)
        toy.setdefault("seed", self.seed)
        try:
            return dg.ToyConfig(**toy)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad toy config: {exc}") from None

    def model_config(self):
        try:
            return mm.ModelConfig.from_dict(self.model)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad model config: {exc}") from None


def run_curve(cfg, out):
    toy = cfg.toy_config()
    mcfg = cfg.model_config()
    os.makedirs(out, exist_ok=True)
    curve = mt.misalignment_curve(toy, cfg.swap_levels, mcfg, cfg.seed)
    curve.to_csv(os.path.join(out, "curve.csv"))
    rho = curve.spearman()
    summary = {
        "schema_version": SCHEMA_VERSION,
        "spearman": None if not np.isfinite(rho) else rho,
        "points": [[float(t), float(f)] for t, f in curve.points],
        "swaps": curve.swaps,
        "errors": {str(k): v for k, v in curve.errors.items()},
        "config": asdict(cfg),
        "artifacts": {"curve": "curve.csv"},
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _out_dir(args, default):
    return args.out or default


def cmd_gen(args):
    cfg = load_experiment_config(args.config, args.seed)
    v1, v2, truth, meta = load_dataset(cfg, args.has_header)
    _check_views(v1, v2, cfg.n_init)
    out = _out_dir(args, "data")
    meta = dict(meta)
    meta["ground_truth"] = None if truth is None else [int(t) for t in truth]
    dg.save_bundle(out, v1, v2, meta)
    print(out)
    return EXIT_OK


def cmd_train(args):
    cfg = load_experiment_config(args.config, args.seed)
    v1, v2, _, _ = _data_for(args, cfg)
    _check_views(v1, v2, cfg.n_init)
    out = _out_dir(args, "model")
    os.makedirs(out, exist_ok=True)
    try:
        model, A, B = _train(cfg, v1, v2)
    except NUMERIC_ERRORS as exc:
        raise NumericFailure(str(exc)) from None
    mm.save_model(model, os.path.join(out, "model.json"))
    _write_json(os.path.join(out, "split.json"), {"anchors": A.tolist(), "unaligned": B.tolist()})
    print(json.dumps({"final_free_energy": model.final_free_energy, **_profile_summary(model)}, sort_keys=True))
    return EXIT_OK


def _data_for(args, cfg):
    if args.data:
        return load_bundle(args.data, args.has_header)
    return load_dataset(cfg, args.has_header)


def cmd_align(args):
    cfg = load_experiment_config(args.config, args.seed)
    v1, v2, truth, _ = _data_for(args, cfg)
    if args.model is None:
        raise UsageError("--model is required")
    if not os.path.exists(args.model):
        raise UsageError(f"missing model checkpoint: {args.model}")
    model = mm.load_model(args.model)
    split_path = args.split or os.path.join(os.path.dirname(os.path.abspath(args.model)), "split.json")
    B = np.asarray(_read_json(split_path, "split file")["unaligned"], dtype=np.int64)
    out = _out_dir(args, "alignment")
    os.makedirs(out, exist_ok=True)
    try:
        res = _align(cfg, model, v1, v2, B, args.method)
    except NUMERIC_ERRORS as exc:
        raise NumericFailure(str(exc)) from None
    truth_B = truth_on_unaligned(truth, B)
    if res.distance_matrix is not None:
        res.distance_matrix.to_csv(os.path.join(out, "distance_matrix.csv"))
    _write_json(os.path.join(out, "alignment.json"), _alignment_doc(res, B, truth_B))
    tau = _score(res.permutation, truth_B)
    print(json.dumps({"method": res.method, "kendall_tau": tau, "complete": res.complete}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    if args.alignment is None:
        raise UsageError("--alignment is required")
    doc = _read_json(args.alignment, "alignment file")
    truth = doc.get("ground_truth")
    if args.truth:
        t = _read_json(args.truth, "ground truth file")
        truth = t.get("ground_truth", t.get("permutation")) if isinstance(t, dict) else t
    if truth is None:
        raise UsageError("no ground truth available; pass --truth")
    try:
        tau = mt.kendall_tau_distance(doc["permutation"], truth)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"cannot score alignment: {exc}") from None
    print(repr(float(tau)))
    return EXIT_OK


def cmd_experiment(args):
    cfg = load_experiment_config(args.config, args.seed)
    out = _out_dir(args, cfg.output_dir or "experiment")
    report = run_experiment(cfg, out, args.has_header)
    print(json.dumps({"kendall_tau": report.get("kendall_tau"), "report": os.path.join(out, "report.json")}))
    return EXIT_OK


def cmd_curve(args):
    if args.config is None:
        raise UsageError("--config is required")
    cfg = CurveConfig.from_dict(_read_json(args.config, "config"), args.seed)
    summary = run_curve(cfg, _out_dir(args, "curve"))
    print(json.dumps({"spearman": summary["spearman"]}))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "align": cmd_align,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "curve": cmd_curve,
}


def _add_globals(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON config file")
    p.add_argument("--out", default=d(None), help="output directory")
    p.add_argument("--seed", type=int, default=d(None), help="overrides the config seed")
    p.add_argument("--threads", type=int, default=d(None), help="worker threads (default: all cores)")
    p.add_argument("--has-header", action="store_true", default=d(False), help="CSV inputs start with a header row")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser():
    parser = argparse.ArgumentParser(prog="madalign", description="Two-view latent alignment experiments.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        _add_globals(sp, suppress=True)
        if name in ("train", "align"):
            sp.add_argument("--data", help="dataset bundle directory from 'gen'")
        if name == "align":
            sp.add_argument("--model", help="model.json from 'train'")
            sp.add_argument("--split", help="split.json (default: next to the model)")
            sp.add_argument("--method", choices=["myopic", "nonmyopic"])
        if name == "eval":
            sp.add_argument("--alignment", help="alignment.json from 'align' or 'experiment'")
            sp.add_argument("--truth", help="JSON ground-truth permutation (list or bundle meta.json)")
    return parser


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(n)
    except ImportError:
        pass


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _set_threads(args.threads)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, MadError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
