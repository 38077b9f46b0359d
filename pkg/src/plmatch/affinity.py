"""Instance similarity, assignment slots and the pairwise assignment affinity matrix."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
import scipy.sparse as sp

from .dataset import PartialLabelDataset

DEFAULT_ALPHA = 0.1
DEFAULT_BETA = 0.5


def mapped_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity between rows of ``a`` and ``b`` mapped to [0, 1] by (1 + cos) / 2."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    for norms in (na, nb):
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ValueError(f"instance {int(zero[0])} has an all-zero feature vector; cosine is undefined")
    cos = (a @ b.T) / np.outer(na, nb)
    return np.clip((1.0 + cos) / 2.0, 0.0, 1.0)


def instance_similarity(ds: PartialLabelDataset | np.ndarray) -> np.ndarray:
    """Dense symmetric m x m similarity matrix with unit diagonal."""
    x = ds.features if isinstance(ds, PartialLabelDataset) else np.asarray(ds, dtype=np.float64)
    sim = mapped_cosine(x, x)
    sim = (sim + sim.T) / 2.0
    np.fill_diagonal(sim, 1.0)
    return sim


def nearest_neighbors(train: np.ndarray, x: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` rows of ``train`` most similar to ``x``; ties go to the lower index."""
    m = train.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k must lie in 1..{m}, got {k}")
    sim = mapped_cosine(np.asarray(x)[None, :], train)[0]
    return np.argsort(-sim, kind="stable")[:k]


@dataclass(frozen=True)
class AssignmentIndex:
    """Flat numbering of the (instance, candidate label) pairs, row by row."""

    instances: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray

    @property
    def size(self) -> int:
        return int(self.instances.shape[0])

    @property
    def n_instances(self) -> int:
        return int(self.offsets.shape[0] - 1)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.instances.tolist(), self.labels.tolist()))

    def block(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def block_labels(self, i: int) -> np.ndarray:
        return self.labels[self.block(i)]

    @property
    def block_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)


def build_index(ds: PartialLabelDataset | tuple) -> AssignmentIndex:
    candidates = ds.candidates if isinstance(ds, PartialLabelDataset) else ds
    sizes = np.array([len(s) for s in candidates], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    instances = np.repeat(np.arange(len(candidates), dtype=np.int64), sizes)
    labels = np.array([y for s in candidates for y in s], dtype=np.int64)
    for arr in (instances, labels, offsets):
        arr.setflags(write=False)
    return AssignmentIndex(instances, labels, offsets)


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    entries: sp.csr_matrix
    index: AssignmentIndex

    @property
    def size(self) -> int:
        return self.index.size

    def dense(self) -> np.ndarray:
        return self.entries.toarray()

    @classmethod
    def from_dense(cls, values: np.ndarray, index: AssignmentIndex) -> "AffinityMatrix":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (index.size, index.size):
            raise ValueError(f"affinity shape {values.shape} does not match {index.size} slots")
        if np.any(values < 0):
            raise ValueError("affinities must be non-negative")
        mat = sp.csr_matrix(values)
        mat.eliminate_zeros()
        mat.sort_indices()
        return cls(mat, index)


def base_affinity(sim: np.ndarray, index: AssignmentIndex) -> np.ndarray:
    """Similarity for slot pairs sharing a label, dissimilarity otherwise."""
    a = sim[np.ix_(index.instances, index.instances)]
    same_label = index.labels[:, None] == index.labels[None, :]
    k = np.where(same_label, a, 1.0 - a)
    # two labels for one instance are mutually exclusive
    same_inst = index.instances[:, None] == index.instances[None, :]
    k[same_inst & ~same_label] = 0.0
    return k


def imbalance_bias(k: np.ndarray, alpha: float) -> np.ndarray:
    """Scale each nonzero entry by 1 + alpha*log2(nnz(row a) + nnz(column b))."""
    if alpha == 0:
        return k.copy()
    nz = k > 0
    row = nz.sum(axis=1)
    col = nz.sum(axis=0)
    counts = row[:, None] + col[None, :]
    out = k.copy()
    out[nz] *= 1.0 + alpha * np.log2(counts[nz])
    return out


def standardize(k: np.ndarray) -> np.ndarray:
    """Min-max rescale the nonzero entries to [0, 1]; zeros stay zero."""
    out = k.copy()
    nz = out > 0
    if not nz.any():
        return out
    lo, hi = out[nz].min(), out[nz].max()
    out[nz] = (out[nz] - lo) / (hi - lo) if hi > lo else 1.0
    return out


def build_affinity(
    sim: np.ndarray,
    index: AssignmentIndex,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> AffinityMatrix:
    """Full affinity pipeline: base values, imbalance bias, standardization, threshold.

    Entries below ``beta`` (strictly) are dropped after standardization.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if sim.shape[0] != index.n_instances:
        raise ValueError("similarity matrix and assignment index cover different instance counts")
    k = standardize(imbalance_bias(base_affinity(sim, index), alpha))
    k[k < beta] = 0.0
    return AffinityMatrix.from_dense(k, index)


def affinity_stats(aff: AffinityMatrix) -> dict:
    mat = aff.entries
    u = aff.size
    nnz = int(mat.nnz)
    rows = np.diff(mat.indptr)
    cols = np.bincount(mat.indices, minlength=u)
    row_hist = np.bincount(rows, minlength=1)
    col_hist = np.bincount(cols, minlength=1)
    return {
        "slots": u,
        "instances": aff.index.n_instances,
        "nnz": nnz,
        "density": nnz / (u * u) if u else 0.0,
        "min_nonzero": float(mat.data.min()) if nnz else None,
        "max_nonzero": float(mat.data.max()) if nnz else None,
        "row_nnz_histogram": row_hist.tolist(),
        "col_nnz_histogram": col_hist.tolist(),
    }


# ---------------------------------------------------------------------------
# binary cache: magic, counts, slot pairs, then COO triples sorted by (row, col)

_MAGIC = b"GMK1"
_HEADER = struct.Struct("<4sQQQ")


def dump_affinity(aff: AffinityMatrix, fh: BinaryIO) -> None:
    coo = aff.entries.tocoo()
    order = np.lexsort((coo.col, coo.row))
    fh.write(_HEADER.pack(_MAGIC, aff.index.n_instances, aff.size, coo.nnz))
    pairs = np.stack([aff.index.instances, aff.index.labels], axis=1).astype("<i8")
    fh.write(pairs.tobytes())
    triples = np.zeros(coo.nnz, dtype=[("row", "<i8"), ("col", "<i8"), ("val", "<f8")])
    triples["row"] = coo.row[order]
    triples["col"] = coo.col[order]
    triples["val"] = coo.data[order]
    fh.write(triples.tobytes())


def read_affinity(fh: BinaryIO) -> AffinityMatrix:
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError("truncated affinity dump")
    magic, m, u, nnz = _HEADER.unpack(raw)
    if magic != _MAGIC:
        raise ValueError(f"not an affinity dump (magic {magic!r})")
    pairs = np.frombuffer(fh.read(16 * u), dtype="<i8").reshape(u, 2)
    triples = np.frombuffer(
        fh.read(24 * nnz), dtype=[("row", "<i8"), ("col", "<i8"), ("val", "<f8")]
    )
    if triples.shape[0] != nnz:
        raise ValueError("truncated affinity dump")
    instances = pairs[:, 0].astype(np.int64)
    counts = np.bincount(instances, minlength=m)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    index = AssignmentIndex(instances, pairs[:, 1].astype(np.int64), offsets)
    mat = sp.csr_matrix(
        (triples["val"].astype(np.float64), (triples["row"], triples["col"])), shape=(u, u)
    )
    mat.sort_indices()
    return AffinityMatrix(mat, index)
