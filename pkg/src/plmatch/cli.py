"""Command-line entry point: ``plmatch <command> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from importlib import resources
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import __version__
from .affinity import affinity_stats, build_affinity, build_index, dump_affinity, instance_similarity
from .dataset import (
    CorruptionSpec,
    PartialLabelDataset,
    atomic_write,
    corrupt,
    load_dataset,
    load_glass,
    save_dataset,
)
from .evaluation import SweepCell, compare_methods, curves_csv, run_cell, sweep, sweep_json, tally
from .matcher import SolverConfig
from .predictor import dumps_model, loads_model, predict_batch, train

log = logging.getLogger("plmatch")

SEED_ENV = "GMPLL_SEED"
BUILTIN_GLASS = "builtin:glass"
DEFAULTS = {
    "alpha": 0.1,
    "beta": 0.5,
    "k": 10,
    "delta": 1e-6,
    "max_iterations": 100,
    "folds": 10,
    "r_override": None,
    "scaling": "zscore",
    "jobs": 1,
    "p": None,
    "r": 1,
    "grid": {},
}


class UsageError(ValueError):
    pass


def load_schema(name: str) -> dict:
    text = resources.files("plmatch").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate(doc: dict, name: str) -> None:
    try:
        jsonschema.validate(doc, load_schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid {name} at {where}: {exc.message}") from None


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags; the merge is validated."""
    cfg = dict(DEFAULTS)
    from_file: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            from_file = json.load(fh)
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        validate(from_file, "config")
        cfg.update({k: v for k, v in from_file.items() if k != "version"})
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    elif "seed" not in from_file:
        cfg["seed"] = env_seed()
    validate({"version": 1, **cfg}, "config")
    return cfg


def env_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        seed = int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be a non-negative integer, got {raw!r}") from None
    if seed < 0:
        raise UsageError(f"{SEED_ENV} must be a non-negative integer, got {raw!r}")
    return seed


def read_dataset(path: str) -> PartialLabelDataset:
    return load_glass() if path == BUILTIN_GLASS else load_dataset(path)


def read_features(path: str) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Features (and truth, if present) from a dataset CSV or a bare numeric CSV."""
    if path == BUILTIN_GLASS:
        ds = load_glass()
        return ds.features, ds.truth
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise ValueError(f"{path}: empty file")
    if "candidates" in header:
        ds = load_dataset(path)
        return ds.features, ds.truth
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for n, row in enumerate(reader, start=1):
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}: row {n}: non-numeric feature") from None
    if not rows:
        raise ValueError(f"{path}: no rows")
    return np.array(rows, dtype=np.float64), None


def out(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands

def cmd_corrupt(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if cfg["p"] is None:
        raise UsageError("corrupt needs a proportion (--p or 'p' in the config)")
    ds = read_dataset(args.input)
    result = corrupt(ds, CorruptionSpec(cfg["p"], cfg["r"], cfg["seed"]))
    save_dataset(result, args.output)
    ambiguous = sum(len(s) > 1 for s in result.candidates)
    out(f"wrote {args.output}: {result.n_instances} instances, {ambiguous} with extra labels")
    return 0


def _solver(cfg: dict) -> SolverConfig:
    return SolverConfig(max_iterations=cfg["max_iterations"], delta=cfg["delta"])


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ds = read_dataset(args.input)
    model = train(ds, cfg["alpha"], cfg["beta"], cfg["k"], _solver(cfg))
    atomic_write(args.output, dumps_model(model))
    res = model.resolved
    status = "converged" if res.converged else "stopped"
    out(f"wrote {args.output}: {model.n_instances} instances, {status} after {res.iterations_used} iterations")
    if ds.truth is not None:
        out(f"transductive accuracy: {np.mean(res.labels == ds.truth):.6f}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    with open(args.model, "rb") as fh:
        model = loads_model(fh.read())
    x, truth = read_features(args.input)
    if x.shape[1] != model.features.shape[1]:
        raise ValueError(f"input has {x.shape[1]} features, model expects {model.features.shape[1]}")
    preds = predict_batch(model, x, args.k, args.r_override)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["instance_id", "predicted_label", "confidence"])
    for i, p in enumerate(preds):
        writer.writerow([i, p.label, repr(p.confidence)])
    atomic_write(args.output, buf.getvalue())
    fallbacks = sum(p.fallback for p in preds)
    out(f"wrote {args.output}: {len(preds)} predictions" + (f", {fallbacks} fallbacks" if fallbacks else ""))
    if truth is not None:
        out(f"inductive accuracy: {np.mean([p.label for p in preds] == truth):.6f}")
    return 0


def _method_kwargs(cfg: dict) -> dict:
    return {
        "k": cfg["k"],
        "r_override": cfg["r_override"],
        "scaling": cfg["scaling"],
        "max_iterations": cfg["max_iterations"],
        "delta": cfg["delta"],
    }


def evaluate_document(ds: PartialLabelDataset, cfg: dict) -> dict:
    """One matching-vs-baseline comparison, corrupting first when a proportion is set."""
    if cfg["p"] is None:
        reports = compare_methods(ds, cfg["beta"], cfg["alpha"], cfg["folds"], cfg["seed"], **_method_kwargs(cfg))
        cell = SweepCell(None, None, cfg["beta"], cfg["alpha"], *reports)
    else:
        cell = run_cell(
            ds, (float(cfg["p"]), int(cfg["r"]), cfg["beta"], cfg["alpha"]), cfg["folds"], cfg["seed"],
            **_method_kwargs(cfg),
        )
    return {"schema": "plmatch-evaluate", "version": 1, **cell.to_dict()}


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    doc = evaluate_document(read_dataset(args.input), cfg)
    validate(doc, "report")
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    gm, base, cmp = doc["matching"], doc["baseline"], doc["comparison"]
    print(
        f"matching {gm['inductive']['mean']:.4f}+-{gm['inductive']['std']:.4f} vs "
        f"plknn {base['inductive']['mean']:.4f}+-{base['inductive']['std']:.4f}: "
        f"{cmp['verdict']} (p={cmp['p_value']:.4g})",
        file=sys.stdout if args.output else sys.stderr,
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ds = read_dataset(args.input)
    grid = {"beta": [cfg["beta"]], "alpha": [cfg["alpha"]], **cfg["grid"]}
    cells = sweep(ds, grid, cfg["folds"], cfg["seed"], cfg["jobs"], **_method_kwargs(cfg))
    text = sweep_json(cells)
    validate(json.loads(text), "report")
    atomic_write(args.output, text)
    if args.curves:
        atomic_write(args.curves, curves_csv(cells))
    t = tally(cells)
    out(f"wrote {args.output}: {len(cells)} cells, win/tie/loss {t['win']}/{t['tie']}/{t['loss']}")
    return 0


def cmd_inspect_affinity(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ds = read_dataset(args.input)
    aff = build_affinity(instance_similarity(ds), build_index(ds), cfg["alpha"], cfg["beta"])
    if args.dump:
        buf = io.BytesIO()
        dump_affinity(aff, buf)
        atomic_write(args.dump, buf.getvalue())
    sys.stdout.write(json.dumps(affinity_stats(aff), indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser

def _nonneg_int(text: str) -> int:
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plmatch", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=_nonneg_int, help=f"random seed (falls back to ${SEED_ENV}, then 0)")

    graph = argparse.ArgumentParser(add_help=False)
    graph.add_argument("--alpha", type=float, help="imbalance bias strength (default 0.1)")
    graph.add_argument("--beta", type=float, help="sparsity threshold on standardized affinity (default 0.5)")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--k", type=int, help="neighbours used for prediction (default 10)")
    solver.add_argument("--delta", type=float, help="convergence tolerance (default 1e-6)")
    solver.add_argument("--max-iterations", dest="max_iterations", type=int, help="iteration cap (default 100)")

    corruption = argparse.ArgumentParser(add_help=False)
    corruption.add_argument("--p", type=float, help="proportion of instances given extra labels")
    corruption.add_argument("--r", type=int, help="number of extra false labels per instance")

    evaluation = argparse.ArgumentParser(add_help=False)
    evaluation.add_argument("--folds", type=int, help="cross-validation folds (default 10)")
    evaluation.add_argument("--r-override", dest="r_override", type=int, help="fixed number of candidate labels at prediction")
    evaluation.add_argument("--scaling", choices=["zscore", "none"], help="per-fold feature scaling (default zscore)")

    p = sub.add_parser("corrupt", parents=[common, corruption], help="add false candidate labels to a dataset")
    p.add_argument("input", help=f"dataset CSV or {BUILTIN_GLASS}")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", parents=[common, graph, solver], help="disambiguate a dataset and store the model")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="model archive path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label unseen instances with a trained model")
    p.add_argument("model")
    p.add_argument("input", help="dataset CSV or bare feature CSV with a header")
    p.add_argument("-o", "--output", required=True, help="predictions CSV")
    p.add_argument("--k", type=int)
    p.add_argument("--r-override", dest="r_override", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser(
        "evaluate", parents=[common, graph, solver, corruption, evaluation],
        help="cross-validate matching against PL-KNN",
    )
    p.add_argument("input")
    p.add_argument("-o", "--output", help="report JSON (stdout if omitted)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common, graph, solver, evaluation], help="run a corruption grid")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="sweep report JSON")
    p.add_argument("--curves", help="accuracy curves CSV")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect-affinity", parents=[common, graph], help="print affinity matrix statistics")
    p.add_argument("input")
    p.add_argument("--dump", help="write the matrix in binary GMK1 form")
    p.set_defaults(func=cmd_inspect_affinity)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        # bad input, bad config, unreadable files: all user-correctable
        print(f"plmatch {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal failure")
        print(f"plmatch {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
