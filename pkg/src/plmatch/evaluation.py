"""Baseline, accuracy metrics, cross-validation and paired significance testing."""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import betainc

from .affinity import DEFAULT_ALPHA, DEFAULT_BETA, nearest_neighbors
from .dataset import CorruptionSpec, PartialLabelDataset, corrupt
from .matcher import Resolution, SolverConfig
from .predictor import DEFAULT_K, predict_batch, train

log = logging.getLogger(__name__)

MATCHING = "matching"
PLKNN = "plknn"
METHODS = (MATCHING, PLKNN)


# ---------------------------------------------------------------------------
# baseline

def pl_knn_predict(train_ds: PartialLabelDataset, x_star: np.ndarray, k: int = DEFAULT_K) -> int:
    """Label with the most candidate-set memberships among the k nearest neighbours."""
    nbrs = nearest_neighbors(train_ds.features, x_star, k)
    return _vote(train_ds, nbrs)


def _vote(ds: PartialLabelDataset, nbrs: Iterable[int], allowed: Optional[Sequence[int]] = None) -> int:
    counts = np.zeros(ds.label_count, dtype=np.int64)
    for c in nbrs:
        counts[list(ds.candidates[c])] += 1
    if allowed is not None:
        mask = np.full(ds.label_count, -1, dtype=np.int64)
        mask[list(allowed)] = counts[list(allowed)]
        counts = mask
    return int(np.argmax(counts))


def pl_knn_disambiguate(ds: PartialLabelDataset, k: int = DEFAULT_K) -> np.ndarray:
    """Transductive PL-KNN: vote among the other training instances, within each candidate set."""
    m = ds.n_instances
    k = min(k, m - 1)
    labels = np.empty(m, dtype=np.int64)
    for i in range(m):
        if len(ds.candidates[i]) == 1 or k < 1:
            labels[i] = ds.candidates[i][0]
            continue
        nbrs = nearest_neighbors(ds.features, ds.features[i], k + 1)
        nbrs = [c for c in nbrs if c != i][:k]
        labels[i] = _vote(ds, nbrs, ds.candidates[i])
    return labels


def transductive_accuracy(resolution: Resolution | np.ndarray, truth: np.ndarray) -> float:
    labels = resolution.labels if isinstance(resolution, Resolution) else np.asarray(resolution)
    return float(np.mean(labels == np.asarray(truth)))


# ---------------------------------------------------------------------------
# cross-validation

@dataclass(frozen=True)
class MethodConfig:
    name: str = MATCHING
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    k: int = DEFAULT_K
    r_override: Optional[int] = None
    max_iterations: int = 100
    delta: float = 1e-6

    def __post_init__(self) -> None:
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}; expected one of {METHODS}")
        if self.k < 1:
            raise ValueError("k must be positive")

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(max_iterations=self.max_iterations, delta=self.delta)


@dataclass
class EvalReport:
    method: str
    folds: int
    inductive: list[float]
    transductive: list[float]
    config: dict = field(default_factory=dict)

    @property
    def inductive_mean(self) -> float:
        return float(np.mean(self.inductive))

    @property
    def inductive_std(self) -> float:
        return float(np.std(self.inductive))

    @property
    def transductive_mean(self) -> float:
        return float(np.mean(self.transductive))

    @property
    def transductive_std(self) -> float:
        return float(np.std(self.transductive))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "folds": self.folds,
            "inductive": {"per_fold": self.inductive, "mean": self.inductive_mean, "std": self.inductive_std},
            "transductive": {
                "per_fold": self.transductive,
                "mean": self.transductive_mean,
                "std": self.transductive_std,
            },
            "config": self.config,
        }


def stratified_folds(truth: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per instance: classes are shuffled and dealt round-robin.

    Fold sizes differ by at most one and each class is spread as evenly as
    its size allows.
    """
    truth = np.asarray(truth)
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if folds > truth.size:
        raise ValueError(f"cannot split {truth.size} instances into {folds} folds")
    rng = np.random.default_rng(seed)
    order = []
    for y in np.unique(truth):
        members = np.flatnonzero(truth == y)
        if members.size < folds:
            log.warning("class %d has %d members for %d folds; it cannot be stratified", y, members.size, folds)
        order.append(rng.permutation(members))
    deal = np.concatenate(order)
    fold_of = np.empty(truth.size, dtype=np.int64)
    fold_of[deal] = np.arange(deal.size) % folds
    return fold_of


def standardize_features(train_x: np.ndarray, test_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Z-score both splits with the training statistics; constant columns are only centered."""
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train_x - mu) / sd, (test_x - mu) / sd


def _run_fold(ds: PartialLabelDataset, train_rows, test_rows, method: MethodConfig, scaling: str):
    train_ds, test_ds = ds.subset(train_rows), ds.subset(test_rows)
    if scaling == "zscore":
        tx, vx = standardize_features(train_ds.features, test_ds.features)
        train_ds, test_ds = train_ds.with_features(tx), test_ds.with_features(vx)
    elif scaling != "none":
        raise ValueError(f"unknown scaling {scaling!r}")
    if method.name == MATCHING:
        model = train(train_ds, method.alpha, method.beta, method.k, method.solver)
        trans = transductive_accuracy(model.resolved, train_ds.truth)
        preds = np.array([p.label for p in predict_batch(model, test_ds.features, method.k, method.r_override)])
    else:
        trans = transductive_accuracy(pl_knn_disambiguate(train_ds, method.k), train_ds.truth)
        k = min(method.k, train_ds.n_instances)
        preds = np.array([pl_knn_predict(train_ds, x, k) for x in test_ds.features])
    return float(np.mean(preds == test_ds.truth)), trans


def cross_validate(
    ds: PartialLabelDataset,
    method: MethodConfig = MethodConfig(),
    folds: int = 10,
    seed: int = 0,
    scaling: str = "zscore",
    extra_config: Optional[dict] = None,
) -> EvalReport:
    if ds.truth is None:
        raise ValueError("cross-validation needs ground truth for scoring")
    fold_of = stratified_folds(ds.truth, folds, seed)
    ind, trans = [], []
    for f in range(folds):
        test_rows = np.flatnonzero(fold_of == f)
        train_rows = np.flatnonzero(fold_of != f)
        a, t = _run_fold(ds, train_rows, test_rows, method, scaling)
        ind.append(a)
        trans.append(t)
    config = {**asdict(method), "folds": folds, "seed": seed, "scaling": scaling}
    if extra_config:
        config.update(extra_config)
    return EvalReport(method.name, folds, ind, trans, config)


# ---------------------------------------------------------------------------
# paired t-test

@dataclass(frozen=True)
class Comparison:
    method_a: str
    method_b: str
    a: tuple[float, ...]
    b: tuple[float, ...]
    t_statistic: float
    p_value: float
    verdict: str

    def to_dict(self) -> dict:
        t = self.t_statistic if math.isfinite(self.t_statistic) else None
        return {
            "method_a": self.method_a,
            "method_b": self.method_b,
            "a": list(self.a),
            "b": list(self.b),
            "t_statistic": t,
            "p_value": self.p_value,
            "verdict": self.verdict,
            "pairing": "per-fold",
        }


def student_t_two_sided(t: float, dof: int) -> float:
    """Two-sided tail probability P(|T| >= |t|) through the regularized incomplete beta."""
    return float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))


def paired_t_test(
    a: Sequence[float],
    b: Sequence[float],
    alpha_level: float = 0.05,
    names: tuple[str, str] = ("a", "b"),
) -> Comparison:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired t-test needs two equal-length vectors with at least 2 entries")
    n = a.size
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd <= 1e-12 * max(1.0, abs(mean)):
        if mean == 0.0 or abs(mean) <= 1e-12:
            t, p = 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, mean), 0.0
    else:
        t = mean / (sd / math.sqrt(n))
        p = student_t_two_sided(t, n - 1)
    if p < alpha_level and mean > 0:
        verdict = "win"
    elif p < alpha_level and mean < 0:
        verdict = "loss"
    else:
        verdict = "tie"
    return Comparison(names[0], names[1], tuple(a.tolist()), tuple(b.tolist()), t, p, verdict)


# ---------------------------------------------------------------------------
# parameter sweep

@dataclass
class SweepCell:
    p: Optional[float]
    r: Optional[int]
    beta: float
    alpha: float
    matching: EvalReport
    baseline: EvalReport
    comparison: Comparison

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "r": self.r,
            "beta": self.beta,
            "alpha": self.alpha,
            "matching": self.matching.to_dict(),
            "baseline": self.baseline.to_dict(),
            "comparison": self.comparison.to_dict(),
        }


def grid_cells(grid: dict) -> list[tuple[float, int, float, float]]:
    ps = grid.get("p", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    rs = grid.get("r", [1, 2, 3])
    betas = grid.get("beta", [DEFAULT_BETA])
    alphas = grid.get("alpha", [DEFAULT_ALPHA])
    return [(float(p), int(r), float(be), float(al)) for r, p, be, al in itertools.product(rs, ps, betas, alphas)]


def compare_methods(
    data: PartialLabelDataset,
    beta: float = DEFAULT_BETA,
    alpha: float = DEFAULT_ALPHA,
    folds: int = 10,
    seed: int = 0,
    k: int = DEFAULT_K,
    r_override: Optional[int] = None,
    scaling: str = "zscore",
    max_iterations: int = 100,
    delta: float = 1e-6,
    echo: Optional[dict] = None,
) -> tuple[EvalReport, EvalReport, Comparison]:
    """Cross-validate matching and the baseline on the same folds and compare them."""
    gm = MethodConfig(MATCHING, alpha, beta, k, r_override, max_iterations, delta)
    base = MethodConfig(PLKNN, alpha, beta, k)
    rep_gm = cross_validate(data, gm, folds, seed, scaling, echo)
    rep_base = cross_validate(data, base, folds, seed, scaling, echo)
    cmp = paired_t_test(rep_gm.inductive, rep_base.inductive, 0.05, (MATCHING, PLKNN))
    return rep_gm, rep_base, cmp


def run_cell(
    ds: PartialLabelDataset,
    cell: tuple[float, int, float, float],
    folds: int = 10,
    seed: int = 0,
    **kwargs,
) -> SweepCell:
    p, r, beta, alpha = cell
    data = corrupt(ds, CorruptionSpec(p, r, seed))
    reports = compare_methods(data, beta, alpha, folds, seed, echo={"p": p, "r": r}, **kwargs)
    return SweepCell(p, r, beta, alpha, *reports)


def _run_cell_star(args):
    return run_cell(*args[:2], **args[2])


def sweep(
    ds: PartialLabelDataset,
    grid: dict,
    folds: int = 10,
    seed: int = 0,
    jobs: int = 1,
    **kwargs,
) -> list[SweepCell]:
    """Corrupt-and-cross-validate every grid cell; results follow grid order.

    Every cell uses the same seed, so a cell's result does not depend on
    where it sits in the grid.
    """
    cells = grid_cells(grid)
    opts = {"folds": folds, "seed": seed, **kwargs}
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell_star, [(ds, c, opts) for c in cells]))
    return [run_cell(ds, c, **opts) for c in cells]


def tally(cells: Sequence[SweepCell]) -> dict:
    counts = {"win": 0, "tie": 0, "loss": 0}
    for c in cells:
        counts[c.comparison.verdict] += 1
    return counts


def curve_rows(cells: Sequence[SweepCell]) -> list[dict]:
    rows = []
    for c in cells:
        for rep in (c.matching, c.baseline):
            rows.append({
                "p": c.p, "r": c.r, "beta": c.beta, "alpha": c.alpha,
                "mean_acc": rep.inductive_mean, "std_acc": rep.inductive_std, "method": rep.method,
            })
    return rows


def curves_csv(cells: Sequence[SweepCell]) -> str:
    lines = ["p,mean_acc,std_acc,method,r,beta,alpha"]
    for row in curve_rows(cells):
        lines.append(
            f"{row['p']!r},{row['mean_acc']!r},{row['std_acc']!r},{row['method']},"
            f"{row['r']},{row['beta']!r},{row['alpha']!r}"
        )
    return "\n".join(lines) + "\n"


def sweep_json(cells: Sequence[SweepCell]) -> str:
    doc = {"schema": "plmatch-sweep", "version": 1, "cells": [c.to_dict() for c in cells], "tally": tally(cells)}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_json(report: EvalReport) -> str:
    doc = {"schema": "plmatch-report", "version": 1, **report.to_dict()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
