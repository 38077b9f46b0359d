"""Many-to-one probabilistic matching over assignment slots.

Each iteration propagates probabilities through the affinity matrix,
renormalizes them inside every instance block (one label per instance, any
number of instances per label) and reweights the affinity rows by the change
in their slot's probability.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .affinity import AffinityMatrix, AssignmentIndex

log = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 10**6


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    delta: float = 1e-6
    epsilon_div: float = 1e-12

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.delta > 0 or not self.epsilon_div > 0:
            raise ValueError("delta and epsilon_div must be positive")


@dataclass(frozen=True, eq=False)
class MatchState:
    """Relaxed assignment probabilities plus the refined affinity.

    The refined matrix is kept as the initial matrix with accumulated
    per-row factors; ``affinity`` materializes it.
    """

    probs: np.ndarray
    base: AffinityMatrix
    row_scale: np.ndarray
    iteration: int = 0
    residual: float = float("inf")

    @property
    def index(self) -> AssignmentIndex:
        return self.base.index

    @property
    def affinity(self) -> sp.csr_matrix:
        return sp.diags(self.row_scale) @ self.base.entries

    def block_sums(self) -> np.ndarray:
        return np.add.reduceat(self.probs, self.index.offsets[:-1])


@dataclass(frozen=True)
class Resolution:
    labels: np.ndarray
    confidence: np.ndarray
    converged: bool
    iterations_used: int


def init_state(aff: AffinityMatrix) -> MatchState:
    sizes = aff.index.block_sizes
    probs = 1.0 / np.repeat(sizes, sizes).astype(np.float64)
    return MatchState(probs=probs, base=aff, row_scale=np.ones(aff.size), iteration=0)


def step(state: MatchState, cfg: SolverConfig = SolverConfig()) -> MatchState:
    index = state.index
    p = state.probs
    q = state.row_scale * (state.base.entries @ p)
    sums = np.add.reduceat(q, index.offsets[:-1])
    dead = ~(sums > 0) | ~np.isfinite(sums)
    if dead.any():
        log.debug("%d instance blocks received no support; keeping their probabilities", int(dead.sum()))
        sums = np.where(dead, 1.0, sums)
    blk = index.instances
    new_p = np.where(dead[blk], p, q / sums[blk])
    # slots whose probability vanished stay dead
    ratio = np.divide(new_p, p, out=np.zeros_like(p), where=p >= cfg.epsilon_div)
    return MatchState(
        probs=new_p,
        base=state.base,
        row_scale=state.row_scale * ratio,
        iteration=state.iteration + 1,
        residual=float(np.linalg.norm(new_p - p)),
    )


def discretize(index: AssignmentIndex, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-instance argmax; ties resolve to the lowest label id."""
    m = index.n_instances
    labels = np.empty(m, dtype=np.int64)
    conf = np.empty(m, dtype=np.float64)
    for i in range(m):
        blk = index.block(i)
        pb = probs[blk]
        top = pb.max()
        winners = np.flatnonzero(pb == top)
        lab = index.labels[blk][winners]
        j = winners[np.argmin(lab)]
        labels[i] = index.labels[blk][j]
        conf[i] = top
    return labels, conf


def relaxed_objective(aff: AffinityMatrix, probs: np.ndarray) -> float:
    return float(probs @ (aff.entries @ probs))


def lsq_residual(state: MatchState) -> float:
    """Least-squares consistency of the probabilities with the refined affinity.

    Read-only diagnostic; the iteration does not minimize it explicitly.
    """
    return float(np.sum((state.affinity @ state.probs - state.probs) ** 2))


def solve(
    aff: AffinityMatrix,
    cfg: SolverConfig = SolverConfig(),
    trace: Optional[TextIO] = None,
) -> tuple[MatchState, Resolution]:
    """Iterate until the probability update falls below ``cfg.delta``, then discretize.

    ``trace`` receives ``iteration,residual,objective`` CSV lines.
    """
    state = init_state(aff)
    converged = False
    if trace is not None:
        trace.write("iteration,residual,objective\n")
    for _ in range(cfg.max_iterations):
        state = step(state, cfg)
        if trace is not None:
            trace.write(f"{state.iteration},{state.residual!r},{relaxed_objective(aff, state.probs)!r}\n")
        if state.residual < cfg.delta:
            converged = True
            break
    labels, conf = discretize(aff.index, state.probs)
    return state, Resolution(labels, conf, converged, state.iteration)


def slots_for(index: AssignmentIndex, labels: Sequence[int]) -> np.ndarray:
    slots = np.empty(index.n_instances, dtype=np.int64)
    for i, y in enumerate(labels):
        blk = index.block(i)
        hit = np.flatnonzero(index.labels[blk] == int(y))
        if hit.size == 0:
            raise ValueError(f"instance {i}: label {int(y)} is not a candidate")
        slots[i] = blk.start + hit[0]
    return slots


def objective(aff: AffinityMatrix, labels: Sequence[int]) -> float:
    """p^T K p for the 0/1 indicator of ``labels``."""
    slots = slots_for(aff.index, labels)
    sub = aff.entries[slots][:, slots]
    return float(sub.sum())


def brute_force(aff: AffinityMatrix, limit: int = BRUTE_FORCE_LIMIT) -> tuple[np.ndarray, float]:
    """Exhaustive maximizer of p^T K p; ties go to the lexicographically smallest labels."""
    index = aff.index
    sizes = index.block_sizes
    space = int(np.prod(sizes.astype(object)))
    if space > limit:
        raise ValueError(f"search space of {space} assignments exceeds the limit of {limit}")
    dense = aff.dense()
    choices = [range(int(o), int(o) + int(s)) for o, s in zip(index.offsets[:-1], sizes)]
    best_val, best = -np.inf, None
    chunk = max(1, 200_000 // max(1, index.n_instances**2))
    it = itertools.product(*choices)
    while True:
        batch = np.array(list(itertools.islice(it, chunk)), dtype=np.int64)
        if batch.size == 0:
            break
        vals = dense[batch[:, :, None], batch[:, None, :]].sum(axis=(1, 2))
        j = int(np.argmax(vals))  # first maximum = lexicographically smallest in the batch
        if vals[j] > best_val:
            best_val, best = float(vals[j]), batch[j]
    return index.labels[best].copy(), best_val


def dominant_assignment(aff: AffinityMatrix, margin: float = 0.5) -> Optional[np.ndarray]:
    """Labels of an assignment whose every cross-instance affinity beats all rivals by ``margin``.

    For each pair of instances the chosen slot pair must exceed every other
    slot pair between the two blocks by at least ``margin``; the chosen slots
    must agree across pairs. Returns None when no such assignment exists.
    """
    index = aff.index
    m = index.n_instances
    if m < 2:
        return None
    dense = aff.dense()
    chosen: list[Optional[int]] = [None] * m
    for i, j in itertools.combinations(range(m), 2):
        sub = dense[index.block(i), index.block(j)]
        flat = np.argmax(sub)
        a, b = np.unravel_index(flat, sub.shape)
        top = sub[a, b]
        rivals = np.delete(sub.ravel(), flat)
        if rivals.size and not np.all(top >= rivals + margin):
            return None
        for inst, local in ((i, a), (j, b)):
            if sub.shape[0 if inst == i else 1] == 1:
                local = 0
            if chosen[inst] is None:
                chosen[inst] = int(local)
            elif chosen[inst] != int(local):
                return None
    return np.array([index.block_labels(i)[c] for i, c in enumerate(chosen)])
