"""Training wrapper and the reconstruction + matching predictor for unseen instances."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .affinity import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    build_affinity,
    build_index,
    instance_similarity,
    mapped_cosine,
    nearest_neighbors,
)
from .dataset import PartialLabelDataset
from .matcher import Resolution, SolverConfig, solve

DEFAULT_K = 10


@dataclass(frozen=True, eq=False)
class TrainedModel:
    features: np.ndarray
    resolved: Resolution
    label_count: int
    avg_candidates: float
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    k: int = DEFAULT_K
    solver: SolverConfig = field(default_factory=SolverConfig)
    similarity: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return self.resolved.labels

    def train_similarity(self) -> np.ndarray:
        if self.similarity is None:
            object.__setattr__(self, "similarity", instance_similarity(self.features))
        return self.similarity


def train(
    ds: PartialLabelDataset,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    k: int = DEFAULT_K,
    solver: SolverConfig = SolverConfig(),
) -> TrainedModel:
    sim = instance_similarity(ds)
    aff = build_affinity(sim, build_index(ds), alpha, beta)
    _, resolution = solve(aff, solver)
    return TrainedModel(
        features=ds.features,
        resolved=resolution,
        label_count=ds.label_count,
        avg_candidates=ds.avg_candidates,
        alpha=alpha,
        beta=beta,
        k=k,
        solver=solver,
        similarity=sim,
    )


def knn(model: TrainedModel, x_star: np.ndarray, k: int) -> np.ndarray:
    return nearest_neighbors(model.features, x_star, k)


# ---------------------------------------------------------------------------
# minimum-error reconstruction on the probability simplex

@dataclass(frozen=True)
class ReconstructionWeights:
    neighbor_ids: np.ndarray
    weights: np.ndarray
    objective: float
    degraded: bool = False


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum(w) = 1} (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def reconstruction_error(x: np.ndarray, basis: np.ndarray, w: np.ndarray) -> float:
    resid = x - w @ basis
    return float(resid @ resid)


def solve_simplex_lsq(
    x: np.ndarray, basis: np.ndarray, tol: float = 1e-8, max_iter: int = 1000
) -> tuple[np.ndarray, float, bool]:
    """Minimize ||x - w @ basis||^2 over the simplex by accelerated projected gradient.

    Returns (weights, objective, converged). The returned weights are the best
    iterate seen, which starts from the uniform vector.
    """
    k = basis.shape[0]
    w = np.full(k, 1.0 / k)
    if k == 1:
        return np.ones(1), reconstruction_error(x, basis, w), True
    gram = basis @ basis.T
    lin = basis @ x
    lip = 2.0 * float(np.linalg.eigvalsh(gram)[-1])
    if lip <= 0:
        return w, reconstruction_error(x, basis, w), True
    step = 1.0 / lip

    def grad(v):
        return 2.0 * (gram @ v - lin)

    best_w, best_f = w, reconstruction_error(x, basis, w)
    y, t = w.copy(), 1.0
    converged = False
    for _ in range(max_iter):
        w_next = project_simplex(y - step * grad(y))
        f = reconstruction_error(x, basis, w_next)
        if f < best_f:
            best_w, best_f = w_next, f
        # stationarity: the projected-gradient map leaves the iterate in place
        if np.linalg.norm(w_next - project_simplex(w_next - step * grad(w_next))) <= tol:
            converged = True
            break
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y = w_next + ((t - 1.0) / t_next) * (w_next - w)
        # restart momentum when it stops paying off
        if f > reconstruction_error(x, basis, w):
            y, t_next = w_next.copy(), 1.0
        w, t = w_next, t_next
    if converged:
        f = reconstruction_error(x, basis, w_next)
        if f <= best_f:
            best_w, best_f = w_next, f
    return best_w, best_f, converged


def reconstruct(model: TrainedModel, x_star: np.ndarray, neighbor_ids: np.ndarray) -> ReconstructionWeights:
    neighbor_ids = np.asarray(neighbor_ids, dtype=np.int64)
    if np.unique(neighbor_ids).size != neighbor_ids.size:
        raise ValueError("neighbor ids must be distinct")
    w, f, ok = solve_simplex_lsq(np.asarray(x_star, dtype=np.float64), model.features[neighbor_ids])
    return ReconstructionWeights(neighbor_ids, w, f, degraded=not ok)


def candidate_confidences(model: TrainedModel, weights: ReconstructionWeights) -> np.ndarray:
    labels = model.labels[weights.neighbor_ids]
    return np.bincount(labels, weights=weights.weights, minlength=model.label_count)


def compute_r(label_count: int, avg_candidates: float) -> int:
    """round(1 + avg_candidates / log10(label_count)), halves rounded up, clamped to [1, q]."""
    if label_count < 2:
        raise ValueError("label_count must be at least 2")
    r = math.floor(1.0 + avg_candidates / math.log10(label_count) + 0.5)
    return int(min(max(r, 1), label_count))


def top_labels(conf: np.ndarray, r: int) -> np.ndarray:
    """The ``r`` highest-confidence label ids (ties to the lower id), ascending."""
    order = np.lexsort((np.arange(conf.size), -conf))
    return np.sort(order[:r])


# ---------------------------------------------------------------------------
# prediction

@dataclass(frozen=True)
class Prediction:
    label: int
    confidence: float
    candidates: tuple[int, ...]
    fallback: bool = False


def _anchored_match(model: TrainedModel, x_star: np.ndarray, candidates: np.ndarray) -> tuple[int, float]:
    """Match the test instance against training slots fixed at their resolved labels.

    Every training instance contributes a single slot (its resolved label), so
    its block probability is pinned at 1 and only the test block moves.
    """
    m = model.n_instances
    sim = np.empty((m + 1, m + 1))
    sim[:m, :m] = model.train_similarity()
    row = mapped_cosine(np.asarray(x_star)[None, :], model.features)[0]
    sim[m, :m] = row
    sim[:m, m] = row
    sim[m, m] = 1.0
    cands = tuple((int(y),) for y in model.labels) + (tuple(int(c) for c in candidates),)
    index = build_index(cands)
    aff = build_affinity(sim, index, model.alpha, model.beta)
    state, res = solve(aff, model.solver)
    return int(res.labels[m]), float(res.confidence[m])


def predict(
    model: TrainedModel,
    x_star: np.ndarray,
    k: Optional[int] = None,
    r_override: Optional[int] = None,
) -> Prediction:
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_star.shape != (model.features.shape[1],):
        raise ValueError(f"query has {x_star.shape[-1]} features, model expects {model.features.shape[1]}")
    k = min(model.k if k is None else k, model.n_instances)
    nbrs = knn(model, x_star, k)
    weights = reconstruct(model, x_star, nbrs)
    conf = candidate_confidences(model, weights)
    r = compute_r(model.label_count, model.avg_candidates) if r_override is None else int(r_override)
    if not 1 <= r <= model.label_count:
        raise ValueError(f"r must lie in 1..{model.label_count}, got {r}")
    cands = top_labels(conf, r)
    if not np.any(conf[cands] > 0):
        best = int(np.argmax(conf))
        return Prediction(best, float(conf[best]), (best,), fallback=True)
    if r == 1:
        y = int(cands[0])
        return Prediction(y, float(conf[y]), (y,))
    label, p = _anchored_match(model, x_star, cands)
    return Prediction(label, p, tuple(int(c) for c in cands))


def predict_batch(
    model: TrainedModel, features: np.ndarray, k: Optional[int] = None, r_override: Optional[int] = None
) -> list[Prediction]:
    return [predict(model, x, k, r_override) for x in np.asarray(features, dtype=np.float64)]


# ---------------------------------------------------------------------------
# archive: magic, header length, JSON header, float64 feature block

_MODEL_MAGIC = b"PLMMODEL1"


def dumps_model(model: TrainedModel) -> bytes:
    header = {
        "version": 1,
        "n_instances": model.n_instances,
        "n_features": int(model.features.shape[1]),
        "label_count": model.label_count,
        "avg_candidates": model.avg_candidates,
        "alpha": model.alpha,
        "beta": model.beta,
        "k": model.k,
        "solver": {
            "max_iterations": model.solver.max_iterations,
            "delta": model.solver.delta,
            "epsilon_div": model.solver.epsilon_div,
        },
        "labels": [int(y) for y in model.resolved.labels],
        "confidence": [float(c) for c in model.resolved.confidence],
        "converged": bool(model.resolved.converged),
        "iterations_used": int(model.resolved.iterations_used),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    feats = np.ascontiguousarray(model.features, dtype="<f8").tobytes()
    return _MODEL_MAGIC + struct.pack("<Q", len(blob)) + blob + feats


def loads_model(data: bytes) -> TrainedModel:
    if not data.startswith(_MODEL_MAGIC):
        raise ValueError("not a model archive")
    pos = len(_MODEL_MAGIC)
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    header = json.loads(data[pos : pos + n].decode("utf-8"))
    pos += n
    m, d = header["n_instances"], header["n_features"]
    feats = np.frombuffer(data, dtype="<f8", count=m * d, offset=pos).reshape(m, d).astype(np.float64)
    res = Resolution(
        labels=np.array(header["labels"], dtype=np.int64),
        confidence=np.array(header["confidence"], dtype=np.float64),
        converged=header["converged"],
        iterations_used=header["iterations_used"],
    )
    return TrainedModel(
        features=feats,
        resolved=res,
        label_count=header["label_count"],
        avg_candidates=header["avg_candidates"],
        alpha=header["alpha"],
        beta=header["beta"],
        k=header["k"],
        solver=SolverConfig(**header["solver"]),
    )
