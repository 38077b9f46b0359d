"""Partial-label data model, CSV storage, controlled corruption and synthetic blobs."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed files or datasets that violate the data model."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PartialLabelDataset:
    """Feature matrix with one candidate label set per row.

    Candidate sets are stored as sorted tuples of dense label ids in
    ``0..label_count-1``. ``truth`` is the hidden ground truth when known.
    """

    features: np.ndarray
    candidates: tuple[tuple[int, ...], ...]
    label_count: int
    truth: Optional[np.ndarray] = None
    label_names: Optional[tuple[str, ...]] = field(default=None)

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DatasetError(f"features must be a non-empty 2-D matrix, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise DatasetError("features contain non-finite values")
        q = int(self.label_count)
        if q < 2:
            raise DatasetError(f"label_count must be at least 2, got {q}")
        m = feats.shape[0]
        if len(self.candidates) != m:
            raise DatasetError(f"{len(self.candidates)} candidate sets for {m} instances")
        cands = []
        for i, s in enumerate(self.candidates):
            s = tuple(sorted({int(y) for y in s}))
            if not s:
                raise DatasetError(f"instance {i}: empty candidate set")
            if s[0] < 0 or s[-1] >= q:
                raise DatasetError(f"instance {i}: label id outside 0..{q - 1}")
            cands.append(s)
        truth = None
        if self.truth is not None:
            truth = np.asarray(self.truth, dtype=np.int64)
            if truth.shape != (m,):
                raise DatasetError(f"truth must have length {m}")
            for i, (y, s) in enumerate(zip(truth, cands)):
                if int(y) not in s:
                    raise DatasetError(f"instance {i}: truth label {int(y)} not in candidate set")
            truth = _freeze(truth)
        names = None
        if self.label_names is not None:
            names = tuple(str(n) for n in self.label_names)
            if len(names) != q:
                raise DatasetError(f"{len(names)} label names for {q} labels")
        object.__setattr__(self, "features", _freeze(feats))
        object.__setattr__(self, "candidates", tuple(cands))
        object.__setattr__(self, "label_count", q)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "label_names", names)

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def candidate_sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.candidates], dtype=np.int64)

    @property
    def avg_candidates(self) -> float:
        return float(self.candidate_sizes.mean())

    def subset(self, rows: Sequence[int]) -> "PartialLabelDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return PartialLabelDataset(
            features=self.features[rows],
            candidates=tuple(self.candidates[i] for i in rows),
            label_count=self.label_count,
            truth=None if self.truth is None else self.truth[rows],
            label_names=self.label_names,
        )

    def with_features(self, features: np.ndarray) -> "PartialLabelDataset":
        return PartialLabelDataset(features, self.candidates, self.label_count, self.truth, self.label_names)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PartialLabelDataset):
            return NotImplemented
        if self.truth is None or other.truth is None:
            same_truth = self.truth is None and other.truth is None
        else:
            same_truth = np.array_equal(self.truth, other.truth)
        return (
            self.label_count == other.label_count
            and self.candidates == other.candidates
            and self.label_names == other.label_names
            and same_truth
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class CorruptionSpec:
    proportion_p: float
    extra_labels_r: int
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.proportion_p <= 1.0:
            raise DatasetError(f"proportion p must lie in [0, 1], got {self.proportion_p}")
        if int(self.extra_labels_r) < 1:
            raise DatasetError(f"extra label count r must be positive, got {self.extra_labels_r}")
        if not 0 <= int(self.seed) < 2**64:
            raise DatasetError("seed must be an unsigned 64-bit integer")


# ---------------------------------------------------------------------------
# CSV format

def meta_path(path: str | os.PathLike) -> Path:
    """Sidecar header path: ``data/glass.csv`` -> ``data/glass.meta.json``."""
    p = Path(path)
    name = p.name[: -len(p.suffix)] if p.suffix else p.name
    return p.with_name(name + ".meta.json")


def _format_float(x: float) -> str:
    return repr(float(x))


def dumps_dataset(ds: PartialLabelDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{j}" for j in range(ds.n_features)] + ["candidates", "truth"])
    for i in range(ds.n_instances):
        truth = "" if ds.truth is None else str(int(ds.truth[i]))
        writer.writerow(
            [_format_float(v) for v in ds.features[i]]
            + ["|".join(str(y) for y in ds.candidates[i]), truth]
        )
    return buf.getvalue()


def dumps_meta(ds: PartialLabelDataset) -> str:
    meta = {"format": "plmatch-csv", "version": 1, "label_count": ds.label_count}
    if ds.label_names is not None:
        meta["labels"] = list(ds.label_names)
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, bytes) else "w"
    kwargs = {} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""}
    with open(tmp, mode, **kwargs) as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_dataset(ds: PartialLabelDataset, path: str | os.PathLike) -> None:
    atomic_write(path, dumps_dataset(ds))
    atomic_write(meta_path(path), dumps_meta(ds))


def load_dataset(path: str | os.PathLike, format: str = "csv") -> PartialLabelDataset:
    """Read a dataset CSV plus its optional ``.meta.json`` sidecar.

    Label tokens may be integer ids or label names; names are resolved through
    the sidecar dictionary, or dictionary-encoded in sorted order when no
    sidecar exists.
    """
    if format != "csv":
        raise DatasetError(f"unsupported dataset format {format!r}")
    path = Path(path)
    meta = {}
    mpath = meta_path(path)
    if mpath.exists():
        with open(mpath, encoding="utf-8") as fh:
            meta = json.load(fh)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "candidates" not in header:
        raise DatasetError(f"{path}: header has no 'candidates' column")
    cand_col = header.index("candidates")
    truth_col = header.index("truth") if "truth" in header else None
    feat_cols = [j for j, h in enumerate(header) if j not in (cand_col, truth_col)]
    if not feat_cols:
        raise DatasetError(f"{path}: no feature columns")

    features: list[list[float]] = []
    raw_cands: list[list[str]] = []
    raw_truth: list[str] = []
    for rownum, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {rownum}: expected {len(header)} fields, got {len(row)}")
        try:
            features.append([float(row[j]) for j in feat_cols])
        except ValueError as exc:
            raise DatasetError(f"{path}: row {rownum}: bad feature value ({exc})") from None
        tokens = [t.strip() for t in row[cand_col].split("|") if t.strip()]
        if not tokens:
            raise DatasetError(f"{path}: row {rownum}: empty candidate set")
        raw_cands.append(tokens)
        raw_truth.append(row[truth_col].strip() if truth_col is not None else "")
    if not features:
        raise DatasetError(f"{path}: no data rows")

    has_truth = [t != "" for t in raw_truth]
    if any(has_truth) and not all(has_truth):
        missing = has_truth.index(False) + 1
        raise DatasetError(f"{path}: row {missing}: truth missing while other rows carry one")

    names = meta.get("labels")
    tokens_all = {t for ts in raw_cands for t in ts} | {t for t in raw_truth if t}
    if names is not None:
        lookup = {str(n): k for k, n in enumerate(names)}
    elif all(_is_int(t) for t in tokens_all):
        lookup = None
    else:
        names = sorted(tokens_all)
        lookup = {n: k for k, n in enumerate(names)}

    def encode(tok: str, rownum: int) -> int:
        if lookup is not None and tok in lookup:
            return lookup[tok]
        if _is_int(tok):
            return int(tok)
        raise DatasetError(f"{path}: row {rownum}: unknown label {tok!r}")

    cands = [[encode(t, i + 1) for t in ts] for i, ts in enumerate(raw_cands)]
    truth = [encode(t, i + 1) for i, t in enumerate(raw_truth)] if all(has_truth) else None

    max_id = max(max(max(c) for c in cands), max(truth) if truth else 0)
    q = int(meta.get("label_count", len(names) if names is not None else max(max_id + 1, 2)))
    for i, c in enumerate(cands):
        if min(c) < 0 or max(c) >= q:
            raise DatasetError(f"{path}: row {i + 1}: label id outside 0..{q - 1}")
        if truth is not None and truth[i] not in c:
            raise DatasetError(f"{path}: row {i + 1}: truth label {truth[i]} not in candidate set")
    return PartialLabelDataset(
        features=np.array(features, dtype=np.float64),
        candidates=tuple(tuple(c) for c in cands),
        label_count=q,
        truth=None if truth is None else np.array(truth),
        label_names=None if names is None else tuple(names),
    )


def _is_int(tok: str) -> bool:
    try:
        int(tok)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# Generators

def corrupt(ds: PartialLabelDataset, spec: CorruptionSpec) -> PartialLabelDataset:
    """Give floor(p*m) randomly chosen instances r extra false candidate labels.

    The input must be fully supervised (every candidate set is {truth}).
    """
    if ds.truth is None:
        raise DatasetError("corruption needs ground truth")
    for i, (s, y) in enumerate(zip(ds.candidates, ds.truth)):
        if s != (int(y),):
            raise DatasetError(f"instance {i}: corruption needs singleton candidate sets equal to truth")
    q, m, r = ds.label_count, ds.n_instances, int(spec.extra_labels_r)
    if r > q - 1:
        raise DatasetError(f"cannot draw r={r} distinct false labels with only {q} labels")
    # guard against p*m landing just below an integer
    n_corrupt = min(m, math.floor(spec.proportion_p * m + 1e-9))
    rng = np.random.default_rng(int(spec.seed))
    chosen = np.sort(rng.choice(m, size=n_corrupt, replace=False)) if n_corrupt else np.array([], dtype=int)
    cands = list(ds.candidates)
    for i in chosen:
        y = int(ds.truth[i])
        pool = np.array([lab for lab in range(q) if lab != y])
        extra = rng.choice(pool, size=r, replace=False)
        cands[i] = tuple(sorted([y] + [int(e) for e in extra]))
    return PartialLabelDataset(ds.features, tuple(cands), q, ds.truth, ds.label_names)


def synth_clusters(
    clusters: int,
    per_cluster: int,
    dim: int,
    separation: float,
    seed: int = 0,
    label_count: Optional[int] = None,
) -> PartialLabelDataset:
    """Isotropic unit-variance Gaussian blobs, one per label, with singleton candidates.

    Centers lie ``separation`` away from the origin along mutually orthogonal
    directions (random directions when ``clusters > dim``).
    """
    q = clusters if label_count is None else int(label_count)
    if clusters < 1 or per_cluster < 1 or dim < 1:
        raise DatasetError("clusters, per_cluster and dim must be positive")
    if clusters > q:
        raise DatasetError(f"{clusters} clusters need at least as many labels, got {q}")
    if not separation > 0:
        raise DatasetError("separation must be positive")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, max(clusters, dim)))
    if clusters <= dim:
        basis, _ = np.linalg.qr(g)
        directions = basis[:, :clusters].T
    else:
        directions = g[:, :clusters].T
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = separation * directions
    truth = np.repeat(np.arange(clusters), per_cluster)
    features = centers[truth] + rng.standard_normal((clusters * per_cluster, dim))
    return PartialLabelDataset(
        features=features,
        candidates=tuple((int(y),) for y in truth),
        label_count=max(q, 2),
        truth=truth,
    )


def fully_supervised(features: np.ndarray, labels: Iterable[int], label_count: int) -> PartialLabelDataset:
    labels = np.asarray(list(labels), dtype=np.int64)
    return PartialLabelDataset(features, tuple((int(y),) for y in labels), label_count, labels)


def load_glass() -> PartialLabelDataset:
    """The 214-instance UCI glass identification data bundled with the package.

    Seven label ids follow the original glass types 1..7 (type 4 has no
    instances); candidates are singletons equal to the truth.
    """
    here = Path(__file__).parent / "data" / "glass.csv"
    return load_dataset(here)
