"""DCA training engine.

Each iteration minimizes the convex majorizer

    lam * a' K a + (A/m) * ||K a - t||^2,    t = xi - v / (2A)

whose minimizer ``a = (lam*m/A * I + K)^{-1} t`` only needs a factorization
computed once per run. Three equivalent ways to apply that inverse are
provided: the dense Gram matrix (``full``), a low-rank factor through the
Sherman-Morrison-Woodbury identity (``smw``), and a low-rank factor with
coefficients restricted to the pivot samples (``sparse``).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import InputError, NumericalError
from .kernels import KernelSpec, LowRankFactor
from .losses import LossSpec, psi, residual, v_update

log = logging.getLogger(__name__)

STRATEGIES = ("auto", "full", "smw", "sparse")
AUTO_FULL_MAX = 2000
DEFAULT_RANK_BUDGET = 1000
DEFAULT_TRACE_TOL = 1e-3

_factorizations = 0


def factorization_count() -> int:
    """Number of solve factorizations built in this process."""
    return _factorizations


def _count_factorization():
    global _factorizations
    _factorizations += 1


# --- kernel operators ---------------------------------------------------------
#
# ``fitted(a)`` is K a for a coefficient vector in the operator's own layout,
# ``embed(a)`` maps that vector onto all m samples, and ``apply_kernel(z)``
# multiplies an m-vector by the (possibly approximate) Gram matrix.

class DenseOperator:
    def __init__(self, K):
        self.K = np.asarray(K, dtype=float)
        if self.K.ndim != 2 or self.K.shape[0] != self.K.shape[1]:
            raise InputError("Gram matrix must be square")
        self.m = self.K.shape[0]

    def fitted(self, a):
        return self.K @ a

    def apply_kernel(self, z):
        return self.K @ z

    def embed(self, a):
        return a


class LowRankOperator:
    """``K ~= P P^T`` with one coefficient per sample."""

    def __init__(self, P):
        self.P = np.asarray(P, dtype=float)
        if self.P.ndim != 2 or self.P.shape[1] < 1:
            raise InputError("low-rank factor needs at least one column")
        self.m = self.P.shape[0]

    def fitted(self, a):
        return self.P @ (self.P.T @ a)

    apply_kernel = fitted

    def embed(self, a):
        return a


class PivotOperator(LowRankOperator):
    """``K ~= P P^T`` with coefficients only on the pivot samples."""

    def __init__(self, P, pivots):
        super().__init__(P)
        self.pivots = np.asarray(pivots, dtype=np.intp)
        self.P_B = self.P[self.pivots]

    def fitted(self, a):
        return self.P @ (self.P_B.T @ a)

    def apply_kernel(self, z):
        return self.P @ (self.P.T @ z)

    def embed(self, a):
        out = np.zeros(self.m)
        out[self.pivots] = a
        return out


def _as_operator(rep):
    if isinstance(rep, (DenseOperator, LowRankOperator)):
        return rep
    if isinstance(rep, LowRankFactor):
        return LowRankOperator(rep.P)
    return DenseOperator(rep)


# --- solve factorizations ----------------------------------------------------

def _ridge(lam, m, A):
    if not (lam > 0 and A > 0 and m >= 1):
        raise InputError(f"need lambda > 0, A > 0, m >= 1 (got {lam}, {A}, {m})")
    return lam * m / A


def _cholesky(M, what):
    try:
        return sla.cho_factor(M, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} is not numerically positive definite: {exc}") from exc


class FullSolver(DenseOperator):
    strategy = "full"

    def __init__(self, K, lam, A):
        super().__init__(K)
        self.lam, self.A = lam, A
        self.ridge = _ridge(lam, self.m, A)
        M = self.K.copy()
        M[np.diag_indices(self.m)] += self.ridge
        self._chol = _cholesky(M, "ridged Gram matrix")
        self.rank = self.m
        _count_factorization()

    def solve(self, t):
        return sla.cho_solve(self._chol, t, check_finite=False)


class SmwSolver(LowRankOperator):
    strategy = "smw"

    def __init__(self, P, lam, A):
        super().__init__(P)
        self.lam, self.A = lam, A
        self.ridge = _ridge(lam, self.m, A)
        G = self.P.T @ self.P
        G[np.diag_indices_from(G)] += self.ridge
        self._chol = _cholesky(G, "ridge + P^T P")
        self.rank = self.P.shape[1]
        _count_factorization()

    def solve(self, t):
        w = sla.cho_solve(self._chol, self.P.T @ t, check_finite=False)
        return (t - self.P @ w) / self.ridge


class SparseSolver(PivotOperator):
    """Pivot-supported solution ``a_B = ((ridge I + P^T P) P_B^T)^{-1} P^T t``.

    The r x r inverse is applied as a Cholesky solve with ``ridge I + P^T P``
    followed by a back substitution with the triangular ``P_B^T``.
    """

    strategy = "sparse"

    def __init__(self, P, pivots, lam, A):
        super().__init__(P, pivots)
        r = self.P.shape[1]
        if self.pivots.shape != (r,):
            raise InputError(f"need exactly {r} pivots for a rank-{r} factor")
        self.lam, self.A = lam, A
        self.ridge = _ridge(lam, self.m, A)
        G = self.P.T @ self.P
        G[np.diag_indices_from(G)] += self.ridge
        self._chol = _cholesky(G, "ridge + P^T P")
        self._upper = self.P_B.T
        diag = np.abs(np.diag(self._upper))
        if not np.all(np.isfinite(self._upper)) or np.any(np.tril(self._upper, -1)) or diag.min() <= 0:
            raise NumericalError(
                "pivot block P_B is singular or not triangular; "
                "use a larger approximation tolerance or a smaller rank"
            )
        self.rank = r
        _count_factorization()

    def solve(self, t):
        w = sla.cho_solve(self._chol, self.P.T @ t, check_finite=False)
        return sla.solve_triangular(self._upper, w, lower=False, check_finite=False)


def prepare_full(K, lam, m, A) -> FullSolver:
    K = np.asarray(K, dtype=float)
    if K.shape != (m, m):
        raise InputError(f"Gram matrix shape {K.shape} does not match m={m}")
    return FullSolver(K, lam, A)


def _factor_P(factor):
    return factor.P if isinstance(factor, LowRankFactor) else np.asarray(factor, dtype=float)


def prepare_smw(factor, lam, m, A) -> SmwSolver:
    P = _factor_P(factor)
    if P.ndim != 2 or P.shape[0] != m:
        raise InputError(f"factor must have m={m} rows")
    return SmwSolver(P, lam, A)


def prepare_sparse(factor: LowRankFactor, lam, m, A) -> SparseSolver:
    if factor.P.shape[0] != m:
        raise InputError(f"factor must have m={m} rows")
    return SparseSolver(factor.P, factor.pivots, lam, A)


# --- iteration ---------------------------------------------------------------

@dataclass(frozen=True)
class DcState:
    """One DCA iterate. ``v`` is always the working vector evaluated at ``xi``,
    except for the start state where ``xi = y`` and ``v = 0``."""

    alpha: np.ndarray | None
    xi: np.ndarray
    v: np.ndarray
    iter: int = 0
    objective_trace: tuple = ()


def initial_state(y) -> DcState:
    y = np.asarray(y, dtype=float)
    return DcState(alpha=None, xi=y.copy(), v=np.zeros_like(y))


def objective(rep, alpha, loss: LossSpec, lam: float, y, xi=None) -> float:
    """``lam * a' K a + mean(psi(r))`` under the given kernel representation."""
    op = _as_operator(rep)
    alpha = np.asarray(alpha, dtype=float)
    if xi is None:
        xi = op.fitted(alpha)
    r = residual(loss.task, y, xi)
    return float(lam * (op.embed(alpha) @ xi) + np.mean(psi(loss, r)))


def stationarity_residual(rep, alpha, loss: LossSpec, lam: float, y) -> float:
    """Sup-norm of the gradient ``K (2 lam a + v/m)`` of the objective."""
    op = _as_operator(rep)
    alpha = np.asarray(alpha, dtype=float)
    xi = op.fitted(alpha)
    v = v_update(loss, y, xi)
    g = 2.0 * lam * xi + op.apply_kernel(v) / op.m
    return float(np.max(np.abs(g)))


def dca_step(solver, state: DcState, loss: LossSpec, y) -> DcState:
    """Solve for the next coefficients, then refresh ``xi`` and ``v`` from them."""
    if not math.isclose(solver.A, loss.A, rel_tol=1e-12):
        raise InputError(f"solver was prepared with A={solver.A} but the loss has A={loss.A}")
    alpha = solver.solve(state.xi - state.v * (0.5 / loss.A))
    xi = solver.fitted(alpha)
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(xi))):
        raise NumericalError(f"non-finite coefficients at iteration {state.iter + 1}")
    v = v_update(loss, y, xi)
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite working vector at iteration {state.iter + 1}")
    obj = objective(solver, alpha, loss, solver.lam, y, xi=xi)
    return DcState(alpha, xi, v, state.iter + 1, state.objective_trace + (obj,))


# --- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Solver settings.

    ``rank_budget`` / ``trace_tol`` control the low-rank factor. Leaving
    both unset uses ``trace < 1e-3 * m or r = 1000``; setting only the rank
    makes it a hard rank target.
    """

    lam: float
    tol: float = 1e-6
    max_iter: int = 100
    strategy: str = "auto"
    rank_budget: int | None = None
    trace_tol: float | None = None
    dense_cap: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise InputError(f"lambda must be positive, got {self.lam}")
        if not (self.tol > 0):
            raise InputError(f"tol must be positive, got {self.tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InputError(f"max_iter must be a positive integer, got {self.max_iter}")
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown strategy {self.strategy!r}; use one of {', '.join(STRATEGIES)}")
        if self.rank_budget is not None and (int(self.rank_budget) != self.rank_budget or self.rank_budget < 1):
            raise InputError(f"rank must be a positive integer, got {self.rank_budget}")
        if self.trace_tol is not None and not self.trace_tol >= 0:
            raise InputError(f"approximation tolerance must be nonnegative, got {self.trace_tol}")

    def factor_settings(self) -> tuple[int, float]:
        if self.rank_budget is None and self.trace_tol is None:
            return DEFAULT_RANK_BUDGET, DEFAULT_TRACE_TOL
        if self.trace_tol is None:
            return int(self.rank_budget), 0.0
        if self.rank_budget is None:
            return DEFAULT_RANK_BUDGET, float(self.trace_tol)
        return int(self.rank_budget), float(self.trace_tol)

    def resolve_strategy(self, m: int) -> str:
        if self.strategy != "auto":
            return self.strategy
        wants_factor = self.rank_budget is not None or self.trace_tol is not None
        return "full" if m <= AUTO_FULL_MAX and not wants_factor else "sparse"


@dataclass
class TrainReport:
    strategy: str
    iterations: int
    converged: bool
    objective_trace: list
    train_seconds: float
    factor_seconds: float
    rank: int
    trace_residual: float | None = None
    warning: str | None = None

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]


@dataclass
class Model:
    """Everything needed to evaluate ``f(x) = sum_i coef_i * kappa(s_i, x)``."""

    task: str
    kernel: KernelSpec
    support: object
    coefficients: np.ndarray
    loss: LossSpec | None = None
    lam: float | None = None
    strategy: str | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float).ravel()
        n = kernels.as_matrix(self.support).shape[0]
        if n != self.coefficients.shape[0] or n < 1:
            raise InputError(
                f"model needs one coefficient per support point (got {self.coefficients.shape[0]} for {n})"
            )

    @property
    def n_support(self) -> int:
        return self.coefficients.shape[0]

    @property
    def dim(self) -> int:
        return kernels.as_matrix(self.support).shape[1]


_PREDICT_BLOCK = 1 << 22


def predict(model: Model, queries) -> np.ndarray:
    """Raw scores ``f(x)``; take the sign for class labels."""
    Q = kernels.as_matrix(queries)
    if Q.shape[0] == 0:
        return np.zeros(0)
    step = max(1, _PREDICT_BLOCK // model.n_support)
    out = np.empty(Q.shape[0])
    for start in range(0, Q.shape[0], step):
        block = Q[start:start + step]
        out[start:start + step] = kernels.gram_cross(model.kernel, model.support, block) @ model.coefficients
    return out


def build_solver(strategy: str, kernel: KernelSpec, X, lam: float, A: float, config: TrainConfig):
    """Factorize once for the chosen strategy; returns (solver, low-rank factor or None)."""
    m = X.shape[0]
    if strategy == "full":
        K = kernels.gram_full(kernel, X, cap=config.dense_cap)
        return prepare_full(K, lam, m, A), None
    budget, trace_tol = config.factor_settings()
    factor = kernels.pivoted_cholesky(kernel, X, budget, trace_tol)
    if strategy == "smw":
        return prepare_smw(factor, lam, m, A), factor
    return prepare_sparse(factor, lam, m, A), factor


def train(config: TrainConfig, data, loss: LossSpec, kernel: KernelSpec, callback=None):
    """Run DCA from the LSSVM start until the working vector settles.

    Stops when ``||v_k - v_{k-1}|| / max(1, ||v_k||) < tol`` or after
    ``max_iter`` solves. ``callback(state)`` is invoked after every step.
    Returns ``(Model, TrainReport)``.
    """
    if data.task != loss.task:
        raise InputError(f"dataset task {data.task!r} does not match loss task {loss.task!r}")
    X = kernels.as_matrix(data)
    y = np.asarray(data.y, dtype=float)
    m = X.shape[0]
    strategy = config.resolve_strategy(m)

    t0 = time.perf_counter()
    solver, factor = build_solver(strategy, kernel, X, config.lam, loss.A, config)
    t_factor = time.perf_counter() - t0

    state = initial_state(y)
    converged = False
    for _ in range(int(config.max_iter)):
        v_old = state.v
        state = dca_step(solver, state, loss, y)
        if callback is not None:
            callback(state)
        vnorm = float(np.linalg.norm(state.v))
        if np.linalg.norm(state.v - v_old) / max(1.0, vnorm) < config.tol:
            converged = True
            break
    seconds = time.perf_counter() - t0

    warning = None
    if not converged:
        warning = f"stopped at max_iter={config.max_iter} before reaching tol={config.tol}"
        log.warning(warning)

    if strategy == "sparse":
        support = X[solver.pivots]
    else:
        support = X
    model = Model(
        task=loss.task,
        kernel=kernel,
        support=support,
        coefficients=np.array(state.alpha),
        loss=loss,
        lam=config.lam,
        strategy=strategy,
        info={"train_seconds": seconds, "iterations": state.iter},
    )
    report = TrainReport(
        strategy=strategy,
        iterations=state.iter,
        converged=converged,
        objective_trace=list(state.objective_trace),
        train_seconds=seconds,
        factor_seconds=t_factor,
        rank=solver.rank,
        trace_residual=None if factor is None else factor.trace_residual,
        warning=warning,
    )
    return model, report
