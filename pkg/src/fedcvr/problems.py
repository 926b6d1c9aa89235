"""Local objectives and gradient oracles.

A client's objective is either

* logistic regression over its rows, plus the nonconvex penalty
  ``reg_alpha * sum_j x_j^2 / (1 + x_j^2)``, or
* a quadratic ``0.5 x^T Q x - c^T x`` with a deterministic gradient oracle.

The global objective is the plain mean over clients.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy import sparse
from scipy.special import expit

from .data import Partition, SparseDataset

Matrix = Union[np.ndarray, sparse.csr_matrix]

_DENSE_LIMIT = 2_000_000


@dataclass
class LogRegProblem:
    features: Matrix
    labels: np.ndarray
    reg_alpha: float = 0.0

    def __post_init__(self):
        if self.reg_alpha < 0:
            raise ValueError("reg_alpha must be non-negative")
        if self.features.shape[0] == 0:
            raise ValueError("client has no rows")
        if self.features.shape[0] != len(self.labels):
            raise ValueError("features and labels disagree on row count")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def rows(self) -> int:
        return self.features.shape[0]


@dataclass
class QuadraticProblem:
    """``f(x) = 0.5 x^T Q x - c^T x``."""

    Q: np.ndarray
    c: np.ndarray = None

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=np.float64)
        if self.Q.ndim != 2 or self.Q.shape[0] != self.Q.shape[1] or self.Q.shape[0] == 0:
            raise ValueError("Q must be a non-empty square matrix")
        if not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be symmetric")
        self.c = np.zeros(self.Q.shape[0]) if self.c is None else np.asarray(self.c, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @property
    def rows(self) -> int:
        return 1


ClientProblem = Union[LogRegProblem, QuadraticProblem]


@dataclass
class FederatedProblem:
    clients: List[ClientProblem]
    dim: int = field(init=False)

    def __post_init__(self):
        if not self.clients:
            raise ValueError("need at least one client")
        dims = {c.dim for c in self.clients}
        if len(dims) != 1:
            raise ValueError(f"clients disagree on dimension: {sorted(dims)}")
        self.dim = dims.pop()

    @property
    def N(self) -> int:
        return len(self.clients)


def _check_x(p, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.dim,):
        raise ValueError(f"expected x of length {p.dim}, got shape {x.shape}")
    return x


def _reg_value(alpha: float, x: np.ndarray) -> float:
    if alpha == 0.0:
        return 0.0
    sq = x * x
    return alpha * float(np.sum(sq / (1.0 + sq)))


def _reg_grad(alpha: float, x: np.ndarray) -> np.ndarray:
    if alpha == 0.0:
        return np.zeros_like(x)
    return alpha * 2.0 * x / (1.0 + x * x) ** 2


def local_loss(p: ClientProblem, x) -> float:
    x = _check_x(p, x)
    if isinstance(p, QuadraticProblem):
        return 0.5 * float(x @ p.Q @ x) - float(p.c @ x)
    z = p.labels * (p.features @ x)
    return float(np.mean(np.logaddexp(0.0, -z))) + _reg_value(p.reg_alpha, x)


def batch_gradient(p: ClientProblem, x, idx: Optional[np.ndarray]) -> np.ndarray:
    """Gradient averaged over rows ``idx`` (with multiplicity); ``None`` means all rows."""
    x = _check_x(p, x)
    if isinstance(p, QuadraticProblem):
        return p.Q @ x - p.c
    A, y = (p.features, p.labels) if idx is None else (p.features[idx], p.labels[idx])
    w = -y * expit(-y * (A @ x))
    return np.asarray(A.T @ w).ravel() / A.shape[0] + _reg_grad(p.reg_alpha, x)


def local_full_gradient(p: ClientProblem, x) -> np.ndarray:
    return batch_gradient(p, x, None)


def sample_batch(p: ClientProblem, b: Optional[int], rng: np.random.Generator) -> Optional[np.ndarray]:
    """Row indices for a size-``b`` minibatch drawn with replacement.

    Returns ``None`` (full gradient, no draw) when ``b`` is ``None`` or covers
    every row, and always for quadratics.
    """
    if b is not None and b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    if b is None or isinstance(p, QuadraticProblem) or b >= p.rows:
        return None
    return rng.integers(0, p.rows, size=b)


def local_stochastic_gradient(p: ClientProblem, x, b: Optional[int], rng: np.random.Generator) -> np.ndarray:
    return batch_gradient(p, x, sample_batch(p, b, rng))


def global_loss(fp: FederatedProblem, x) -> float:
    return float(np.mean([local_loss(c, x) for c in fp.clients]))


def global_full_gradient(fp: FederatedProblem, x) -> np.ndarray:
    return np.mean([local_full_gradient(c, x) for c in fp.clients], axis=0)


def _power_iteration(apply, dim: int, rng: np.random.Generator, iters: int = 200, rtol: float = 1e-8) -> float:
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply(v)
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - lam) <= rtol * new:
            return new
        lam = new
    return lam


def client_smoothness(p: ClientProblem, rng: Optional[np.random.Generator] = None) -> float:
    if isinstance(p, QuadraticProblem):
        return float(np.max(np.abs(np.linalg.eigvalsh(p.Q))))
    rng = np.random.default_rng(0) if rng is None else rng
    A = p.features
    lam = _power_iteration(lambda v: np.asarray(A.T @ (A @ v)).ravel(), p.dim, rng)
    return lam / (4.0 * p.rows) + 2.0 * p.reg_alpha


def smoothness_bound(fp: FederatedProblem, seed: int = 0) -> float:
    """Common smoothness constant ``L = max_i L_i``."""
    return max(client_smoothness(c, np.random.default_rng([seed, i])) for i, c in enumerate(fp.clients))


def estimate_sigma(
    fp: FederatedProblem, x, trials: int, rng: np.random.Generator, b: Optional[int] = 1
) -> float:
    """sqrt of the largest per-client mean ||g_b(x) - grad f_i(x)||^2 over ``trials`` draws."""
    if trials < 2:
        raise ValueError("trials must be >= 2")
    worst = 0.0
    for c in fp.clients:
        if b is None or isinstance(c, QuadraticProblem) or b >= c.rows:
            continue
        full = local_full_gradient(c, x)
        acc = 0.0
        for _ in range(trials):
            diff = local_stochastic_gradient(c, x, b, rng) - full
            acc += float(diff @ diff)
        worst = max(worst, acc / trials)
    return float(np.sqrt(worst))


def logreg_problem(ds: SparseDataset, part: Partition, reg_alpha: float = 0.0) -> FederatedProblem:
    """One logistic-regression client per partition chunk."""
    X = ds.features
    dense = X.shape[0] * X.shape[1] <= _DENSE_LIMIT
    clients = []
    for rows in part.assignment:
        A = X[rows]
        clients.append(LogRegProblem(A.toarray() if dense else A.tocsr(), ds.labels[rows].copy(), reg_alpha))
    return FederatedProblem(clients)


def random_quadratic(N: int, d: int, seed: int, mu: float = 0.1) -> FederatedProblem:
    """``N`` strongly convex quadratics with distinct minimizers."""
    rng = np.random.default_rng(seed)
    clients = []
    for _ in range(N):
        M = rng.standard_normal((d, d))
        clients.append(QuadraticProblem(M @ M.T / d + mu * np.eye(d), rng.standard_normal(d)))
    return FederatedProblem(clients)

