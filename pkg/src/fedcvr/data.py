"""LIBSVM ingestion, synthetic data and client partitioning."""
from dataclasses import dataclass
from typing import IO, Dict, List, Union

import numpy as np
from scipy import sparse


class LibsvmParseError(ValueError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


@dataclass
class SparseDataset:
    """Binary classification data.

    ``features`` is an ``n x d`` CSR matrix whose last column is a constant
    bias feature equal to 1.0. ``labels`` holds -1.0 / +1.0.
    """

    features: sparse.csr_matrix
    labels: np.ndarray

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def row(self, i: int) -> Dict[int, float]:
        lo, hi = self.features.indptr[i], self.features.indptr[i + 1]
        return {int(j): float(v) for j, v in zip(self.features.indices[lo:hi], self.features.data[lo:hi])}


@dataclass
class Partition:
    assignment: List[np.ndarray]

    @property
    def N(self) -> int:
        return len(self.assignment)


def _parse_label(tok: str, line_no: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise LibsvmParseError(line_no, f"bad label {tok!r}") from None
    if v == 1.0:
        return 1.0
    if v in (-1.0, 0.0):
        return -1.0
    raise LibsvmParseError(line_no, f"label must be +1/-1 or 1/0, got {tok!r}")


def parse_libsvm(source: Union[str, bytes, IO]) -> SparseDataset:
    """Parse LIBSVM text (``<label> <idx>:<val> ...``, 1-based indices).

    Feature ``j`` lands in column ``j - 1``; one bias column is appended after
    the largest observed index. Label 0 is read as -1. Blank lines are skipped.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")

    labels, rows, cols, vals = [], [], [], []
    max_idx = 0
    for line_no, line in enumerate(source.splitlines(), start=1):
        toks = line.split()
        if not toks:
            continue
        r = len(labels)
        labels.append(_parse_label(toks[0], line_no))
        for tok in toks[1:]:
            idx_s, sep, val_s = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(line_no, f"malformed feature token {tok!r}") from None
            if idx < 1:
                raise LibsvmParseError(line_no, f"feature index must be >= 1, got {idx}")
            if not np.isfinite(val):
                raise LibsvmParseError(line_no, f"non-finite value in {tok!r}")
            rows.append(r)
            cols.append(idx - 1)
            vals.append(val)
            max_idx = max(max_idx, idx)

    n = len(labels)
    if n == 0:
        raise ValueError("empty LIBSVM input")
    d = max_idx + 1
    rows.extend(range(n))
    cols.extend([d - 1] * n)
    vals.extend([1.0] * n)
    # repeated indices within a row are summed
    X = sparse.coo_matrix((vals, (rows, cols)), shape=(n, d)).tocsr()
    X.sort_indices()
    return SparseDataset(X, np.asarray(labels))


def load_libsvm(path: str) -> SparseDataset:
    with open(path, "rb") as fh:
        return parse_libsvm(fh)


def to_libsvm(ds: SparseDataset) -> str:
    """Serialize back to LIBSVM text, dropping the bias column."""
    lines = []
    bias = ds.d - 1
    for i in range(ds.n):
        label = "+1" if ds.labels[i] > 0 else "-1"
        feats = " ".join(f"{j + 1}:{v!r}" for j, v in sorted(ds.row(i).items()) if j != bias)
        lines.append(f"{label} {feats}".rstrip())
    return "\n".join(lines) + "\n"


def make_synthetic(n: int, d: int, seed: int, noise: float = 1.0) -> SparseDataset:
    """Gaussian features with a planted linear classifier and logistic label noise.

    ``d`` counts the bias column, so ``d - 1`` random features are drawn.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = np.random.default_rng(seed)
    A = np.hstack([rng.standard_normal((n, d - 1)), np.ones((n, 1))])
    w = rng.standard_normal(d)
    w /= max(np.linalg.norm(w), 1e-12)
    margin = A @ w * 3.0
    p = 1.0 / (1.0 + np.exp(-margin / max(noise, 1e-12)))
    labels = np.where(rng.random(n) < p, 1.0, -1.0)
    return SparseDataset(sparse.csr_matrix(A), labels)


def _split(order: np.ndarray, N: int) -> Partition:
    return Partition([np.asarray(c, dtype=np.int64) for c in np.array_split(order, N)])


def _check_N(n: int, N: int):
    if N < 1:
        raise ValueError(f"client count must be >= 1, got {N}")
    if N > n:
        raise ValueError(f"cannot split {n} rows across {N} clients")


def partition_uniform(ds: SparseDataset, N: int, rng: np.random.Generator) -> Partition:
    """Shuffle rows, then cut into ``N`` contiguous chunks (sizes differ by <= 1)."""
    _check_N(ds.n, N)
    return _split(rng.permutation(ds.n), N)


def partition_class_sorted(ds: SparseDataset, N: int) -> Partition:
    """Stable sort by label (-1 first), then cut into ``N`` contiguous chunks."""
    _check_N(ds.n, N)
    return _split(np.argsort(ds.labels, kind="stable"), N)
