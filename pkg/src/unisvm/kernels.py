"""Gaussian kernel evaluation, Gram matrices and pivoted-Cholesky factors."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, InputError, NumericalError

DEFAULT_DENSE_CAP = 20_000
DENSE_CAP_ENV = "UNISVM_DENSE_CAP"

# Residual diagonals in [-CLAMP_NEG, 0) are rounding noise; below -BREAKDOWN
# the kernel is not numerically PSD.
CLAMP_NEG = 1e-12
BREAKDOWN = 1e-6
# Pivots at or below this fraction of the largest kernel diagonal are treated
# as exhausted: the factor already spans the numerical range of K.
PIVOT_FLOOR = 1e-12


def dense_cap() -> int:
    raw = os.environ.get(DENSE_CAP_ENV)
    if raw is None:
        return DEFAULT_DENSE_CAP
    try:
        cap = int(raw)
    except ValueError:
        raise InputError(f"{DENSE_CAP_ENV} must be an integer, got {raw!r}") from None
    if cap < 1:
        raise InputError(f"{DENSE_CAP_ENV} must be positive")
    return cap


@dataclass(frozen=True)
class KernelSpec:
    """``kappa(x, z) = exp(-gamma * ||x - z||**2)``."""

    gamma: float
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise InputError(f"unsupported kernel {self.kind!r}; only 'gaussian' is built in")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise InputError(f"kernel gamma must be positive, got {self.gamma}")

    def from_sqdist(self, d2):
        return np.exp(-self.gamma * d2)

    def diag(self, n: int) -> np.ndarray:
        return np.ones(n)


@dataclass(frozen=True)
class LowRankFactor:
    """``P @ P.T ~= K`` with the pivot rows of ``K`` reproduced exactly.

    ``P[pivots]`` is lower triangular (row ``j`` of it has nonzeros only in
    the first ``j + 1`` columns), which is what makes it invertible.
    """

    P: np.ndarray
    pivots: np.ndarray
    trace_residual: float
    trace_history: tuple = ()

    @property
    def rank(self) -> int:
        return self.P.shape[1]

    @property
    def P_B(self) -> np.ndarray:
        return self.P[self.pivots]


def as_matrix(data):
    """Feature matrix of a Dataset, sparse matrix or array-like (2-d)."""
    X = getattr(data, "X", data)
    if sp.issparse(X):
        return X.tocsr()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InputError("feature data must be 2-dimensional")
    return X


def _densify(X):
    """Dense copy when small enough; kernel math on tiny dims is faster dense."""
    if sp.issparse(X) and X.shape[0] * X.shape[1] <= 50_000_000:
        return X.toarray()
    return X


def _sqnorms(X) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", X, X)


def _cross(X, Z) -> np.ndarray:
    G = X @ Z.T
    return G.toarray() if sp.issparse(G) else np.asarray(G)


def _align(support, queries):
    """Pad the narrower matrix with zero columns; sparse data omit trailing zeros."""
    ds, dq = support.shape[1], queries.shape[1]
    if ds == dq:
        return support, queries
    if dq > ds:
        raise InputError(
            f"query features reach dimension {dq} but the support set only has {ds}"
        )
    if sp.issparse(queries):
        queries = sp.csr_matrix((queries.data, queries.indices, queries.indptr),
                                shape=(queries.shape[0], ds))
    else:
        queries = np.hstack([queries, np.zeros((queries.shape[0], ds - dq))])
    return support, queries


def kernel_eval(spec: KernelSpec, x, z) -> float:
    x = np.asarray(x.toarray() if sp.issparse(x) else x, dtype=float).ravel()
    z = np.asarray(z.toarray() if sp.issparse(z) else z, dtype=float).ravel()
    if x.shape != z.shape:
        raise InputError(f"dimension mismatch: {x.shape[0]} vs {z.shape[0]}")
    diff = x - z
    return float(spec.from_sqdist(diff @ diff))


def gram_cross(spec: KernelSpec, support, queries) -> np.ndarray:
    """``len(queries) x len(support)`` matrix of kernel values."""
    S, Q = _align(as_matrix(support), as_matrix(queries))
    if S.shape[0] == 0 or Q.shape[0] == 0:
        raise InputError("gram_cross needs nonempty support and query sets")
    S, Q = _densify(S), _densify(Q)
    d2 = _sqnorms(Q)[:, None] + _sqnorms(S)[None, :] - 2.0 * _cross(Q, S)
    np.maximum(d2, 0.0, out=d2)
    return spec.from_sqdist(d2)


def gram_full(spec: KernelSpec, data, cap: int | None = None) -> np.ndarray:
    """Dense symmetric Gram matrix, built from its upper triangle."""
    X = as_matrix(data)
    m = X.shape[0]
    if m < 1:
        raise InputError("gram_full needs at least one sample")
    cap = dense_cap() if cap is None else cap
    if m > cap:
        raise CapacityError(
            f"dense Gram matrix for m={m} exceeds the cap of {cap} samples; "
            f"use the sparse (low-rank) solver or raise {DENSE_CAP_ENV}"
        )
    X = _densify(X)
    n2 = _sqnorms(X)
    d2 = n2[:, None] + n2[None, :] - 2.0 * _cross(X, X)
    np.maximum(d2, 0.0, out=d2)
    K = np.triu(spec.from_sqdist(d2), 1)
    K += K.T
    K[np.diag_indices(m)] = spec.diag(m)
    return K


def kernel_column(spec: KernelSpec, X, sqnorms: np.ndarray, i: int) -> np.ndarray:
    """Column ``i`` of the Gram matrix without forming the rest of it."""
    xi = X[i]
    if sp.issparse(X):
        g = np.asarray((X @ xi.T).todense()).ravel()
    else:
        g = X @ xi
    d2 = sqnorms + sqnorms[i] - 2.0 * g
    np.maximum(d2, 0.0, out=d2)
    d2[i] = 0.0
    return spec.from_sqdist(d2)


def pivoted_cholesky(spec: KernelSpec, data, rank_budget: int, trace_tol: float = 0.0) -> LowRankFactor:
    """Greedy pivoted Cholesky factor of the Gram matrix.

    At each step the sample with the largest residual diagonal becomes a
    pivot (lowest index on ties) and the residual is deflated by one rank.
    Stops once ``trace(K - P P^T) < trace_tol * m``, ``rank_budget`` pivots
    have been taken, or the residual diagonal is exhausted. Only the pivot
    columns of ``K`` are ever evaluated, so the cost is ``O(m r^2)``.
    """
    if int(rank_budget) != rank_budget or rank_budget < 1:
        raise InputError(f"rank_budget must be a positive integer, got {rank_budget}")
    if not trace_tol >= 0:
        raise InputError(f"trace_tol must be nonnegative, got {trace_tol}")
    X = _densify(as_matrix(data))
    m = X.shape[0]
    if m < 1:
        raise InputError("pivoted_cholesky needs at least one sample")
    budget = min(int(rank_budget), m)
    sqn = _sqnorms(X)
    d = spec.diag(m).astype(float)
    floor = PIVOT_FLOOR * float(d.max())
    # column-major so the P[:, :j] @ P[i, :j] slices stay contiguous
    P = np.zeros((m, budget), order="F")
    pivots = []
    trace = float(d.sum())
    history = [trace]
    for j in range(budget):
        i = int(np.argmax(d))
        pivot = d[i]
        if pivot <= floor:
            break
        col = kernel_column(spec, X, sqn, i)
        if j:
            col -= P[:, :j] @ P[i, :j]
        col /= math.sqrt(pivot)
        # residual rows of earlier pivots vanish; drop the rounding noise so
        # P[pivots] is exactly lower triangular
        col[pivots] = 0.0
        P[:, j] = col
        pivots.append(i)
        d -= col * col
        d[i] = 0.0
        worst = float(d.min())
        if worst < -BREAKDOWN:
            raise NumericalError(
                f"pivoted Cholesky broke down at rank {j + 1}: residual diagonal {worst:.3e} "
                "(kernel matrix is not numerically positive semidefinite)"
            )
        if worst < 0.0:
            np.maximum(d, 0.0, out=d)
        trace = float(d.sum())
        history.append(trace)
        if trace < trace_tol * m:
            break
    r = len(pivots)
    return LowRankFactor(
        P=np.ascontiguousarray(P[:, :r]),
        pivots=np.asarray(pivots, dtype=np.intp),
        trace_residual=trace,
        trace_history=tuple(history),
    )
