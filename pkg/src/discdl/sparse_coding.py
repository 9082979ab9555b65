"""l1-regularized least-squares coding.

Every solver here minimizes the plain (unhalved) objective

    ||x - D a||_2^2 + lam * ||a||_1

so the effective per-coordinate threshold is ``lam / 2``.  Batch routines treat
the columns of a signal matrix as independent problems and stop each column as
soon as it satisfies the KKT conditions, so a batch result matches the
single-signal result column by column.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

PROXIMAL_GRADIENT = "proximal_gradient"
COORDINATE_DESCENT = "coordinate_descent"
# relative size of floating-point noise in objective values
ROUNDOFF = 1e-13


class ConvergenceError(RuntimeError):
    """Raised when a solver exhausts its iteration budget.

    ``residual`` is the final KKT residual; ``column`` is set by the batch
    coder to the index of the first failing signal.
    """

    def __init__(self, message: str, residual: float, column: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.column = column


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 20000
    kkt_tolerance: float = 1e-8
    step_rule: str = "backtracking"
    algorithm: str = PROXIMAL_GRADIENT

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be > 0")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")
        if self.algorithm not in (PROXIMAL_GRADIENT, COORDINATE_DESCENT):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass(frozen=True)
class SparseCodeProblem:
    dictionary: np.ndarray
    signal: np.ndarray
    lam: float

    def __post_init__(self):
        D = np.asarray(self.dictionary, dtype=float)
        x = np.asarray(self.signal, dtype=float).reshape(-1)
        if D.ndim != 2 or D.shape[1] < 1:
            raise ValueError("dictionary must be a 2-D array with at least one column")
        if x.shape[0] != D.shape[0]:
            raise ValueError(
                f"signal length {x.shape[0]} does not match dictionary rows {D.shape[0]}"
            )
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        object.__setattr__(self, "dictionary", D)
        object.__setattr__(self, "signal", x)
        object.__setattr__(self, "lam", float(self.lam))


@dataclass
class SolveInfo:
    """Diagnostics returned by the internal solvers (one entry per column)."""

    iterations: np.ndarray
    converged: np.ndarray
    residual: np.ndarray
    history: list[np.ndarray] = field(default_factory=list)


def soft_threshold(v, t):
    """Proximal map of ``t * |.|``: ``sign(v) * max(|v| - t, 0)``.

    Works elementwise on arrays; ``t`` may broadcast against ``v``.

    >>> soft_threshold(2.0, 1.0)
    1.0
    >>> soft_threshold(-2.0, 1.0)
    -1.0
    >>> soft_threshold(0.5, 1.0)
    0.0
    """
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def lasso_objective(D: np.ndarray, X: np.ndarray, A: np.ndarray, lam: float) -> np.ndarray:
    """Per-column value of ``||x - D a||^2 + lam ||a||_1``."""
    R = X - D @ A
    return np.einsum("ij,ij->j", R, R) + lam * np.abs(A).sum(axis=0)


def kkt_residual(grad: np.ndarray, Z: np.ndarray, weight: float) -> np.ndarray:
    """Per-column KKT violation of ``min smooth(Z) + weight ||Z||_1``.

    ``grad`` is the gradient of the smooth part at ``Z``.  On the support the
    violation is ``|g + weight sign(z)|``; off the support it is
    ``max(|g| - weight, 0)``.
    """
    on = Z != 0
    viol = np.where(on, np.abs(grad + weight * np.sign(Z)), np.maximum(np.abs(grad) - weight, 0.0))
    if viol.shape[0] == 0:
        return np.zeros(viol.shape[1])
    return viol.max(axis=0)


def lasso_kkt_residual(D: np.ndarray, X: np.ndarray, A: np.ndarray, lam: float) -> np.ndarray:
    grad = -2.0 * D.T @ (X - D @ A)
    return kkt_residual(grad, A, lam)


def power_iteration(M: np.ndarray, n_iter: int = 50, tol: float = 1e-8, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = M.shape[0]
    if n == 0 or not np.any(M):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(n_iter):
        w = M @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = float(v @ M @ v)
        if abs(new - est) <= tol * max(abs(new), 1.0):
            est = new
            break
        est = new
    return est


def lipschitz_lasso(D: np.ndarray) -> float:
    """Lipschitz constant of the gradient of ``||x - D a||^2`` (2 * lambda_max(D^T D))."""
    return 2.0 * power_iteration(D.T @ D)


# smooth(Z, cols) -> (values, grad); ``cols`` are the global column indices of Z
SmoothFn = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, np.ndarray]"]


def proximal_gradient(
    smooth: SmoothFn,
    weight: float,
    Z0: np.ndarray,
    lipschitz: float,
    *,
    max_iter: int,
    tol: float,
    backtracking: bool = True,
    record: bool = False,
) -> tuple[np.ndarray, SolveInfo]:
    """Monotone accelerated proximal gradient for ``smooth(Z) + weight * ||Z||_1``.

    The problem must be separable over the columns of ``Z``: ``smooth(Z, cols)``
    returns per-column values and the gradient for the columns ``cols`` of the
    full problem.  A non-separable problem is passed as a single column.

    Each column keeps its own step, momentum and stopping state, and stops as
    soon as its KKT residual drops to ``tol``.  The accepted iterate never has
    a larger objective than the previous one (up to ``ROUNDOFF`` relative
    noise on plain steps); momentum restarts whenever the proximal step fails
    to improve.  With ``backtracking`` the step is halved
    until the quadratic upper model holds.
    """
    Z = np.array(Z0, dtype=float, copy=True)
    m = Z.shape[1]
    all_cols = np.arange(m)
    L = np.full(m, max(float(lipschitz), 1e-12))
    t = np.ones(m)
    iterations = np.zeros(m, dtype=int)
    history: list[np.ndarray] = []

    fx, gx = smooth(Z, all_cols)
    Fx = fx + weight * np.abs(Z).sum(axis=0)
    residual = kkt_residual(gx, Z, weight)
    converged = residual <= tol
    if record:
        history.append(Fx.copy())
    Y = Z.copy()
    fy, gy = fx.copy(), gx.copy()
    plain = np.ones(m, dtype=bool)
    active = np.flatnonzero(~converged)

    for _ in range(max_iter):
        if active.size == 0:
            break
        Ya, fya, gya, La = Y[:, active], fy[active], gy[:, active], L[active]
        while True:
            Zn = soft_threshold(Ya - gya / La, weight / La)
            fz, gz = smooth(Zn, active)
            if not backtracking:
                break
            diff = Zn - Ya
            bound = (
                fya
                + np.einsum("ij,ij->j", gya, diff)
                + 0.5 * La * np.einsum("ij,ij->j", diff, diff)
            )
            bad = fz > bound + 1e-12 * np.maximum(1.0, np.abs(bound))
            if not np.any(bad):
                break
            La = np.where(bad, 2.0 * La, La)
        L[active] = La
        Fz = fz + weight * np.abs(Zn).sum(axis=0)
        Xa = Z[:, active]
        # a plain step (Y = X) with a valid step size decreases F in exact
        # arithmetic; accept it through round-off, else it would repeat forever
        slack = np.where(plain[active], ROUNDOFF * np.maximum(1.0, np.abs(Fx[active])), 0.0)
        better = Fz <= Fx[active] + slack
        Xn = np.where(better, Zn, Xa)
        ta = t[active]
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * ta * ta))
        Yn = Xn + (ta / tn) * (Zn - Xn) + ((ta - 1.0) / tn) * (Xn - Xa)
        Yn = np.where(better, Yn, Xn)
        tn = np.where(better, tn, 1.0)

        Z[:, active] = Xn
        Fx[active] = np.where(better, Fz, Fx[active])
        t[active] = tn
        plain[active] = ~better
        iterations[active] += 1

        gxn = np.where(better, gz, 0.0)
        if not np.all(better):
            keep = ~better
            gxn[:, keep] = smooth(Xn[:, keep], active[keep])[1]
        res = kkt_residual(gxn, Xn, weight)
        residual[active] = res
        done = res <= tol

        fyn, gyn = smooth(Yn, active)
        Y[:, active] = Yn
        fy[active] = fyn
        gy[:, active] = gyn
        if record:
            history.append(Fx.copy())
        converged[active] = done
        active = active[~done]

    return Z, SolveInfo(iterations, converged, residual, history)


def _lasso_pg(D, X, lam, Z0, opts: SolverOptions, record=False):
    L = lipschitz_lasso(D)

    def smooth(A, cols):
        R = X[:, cols] - D @ A
        return np.einsum("ij,ij->j", R, R), -2.0 * (D.T @ R)

    return proximal_gradient(
        smooth,
        lam,
        Z0,
        L,
        max_iter=opts.max_iterations,
        tol=opts.kkt_tolerance,
        backtracking=opts.step_rule == "backtracking",
        record=record,
    )


def _lasso_cd(D, X, lam, Z0, opts: SolverOptions, record=False):
    """Cyclic coordinate descent, vectorized across the active columns."""
    A = np.array(Z0, dtype=float, copy=True)
    m = X.shape[1]
    sq = np.einsum("ij,ij->j", D, D)
    atoms = np.flatnonzero(sq > 0)
    A[sq == 0] = 0.0
    R = X - D @ A
    iterations = np.zeros(m, dtype=int)
    residual = kkt_residual(-2.0 * D.T @ R, A, lam)
    converged = residual <= opts.kkt_tolerance
    history = [lasso_objective(D, X, A, lam)] if record else []
    active = np.flatnonzero(~converged)
    for _ in range(opts.max_iterations):
        if active.size == 0:
            break
        Aa, Ra = A[:, active], R[:, active]
        for j in atoms:
            old = Aa[j].copy()
            rho = D[:, j] @ Ra + sq[j] * old
            new = soft_threshold(rho, 0.5 * lam) / sq[j]
            delta = new - old
            if np.any(delta):
                Ra -= np.outer(D[:, j], delta)
                Aa[j] = new
        A[:, active] = Aa
        R[:, active] = Ra
        iterations[active] += 1
        res = kkt_residual(-2.0 * D.T @ Ra, Aa, lam)
        residual[active] = res
        done = res <= opts.kkt_tolerance
        converged[active] = done
        if record:
            history.append(lasso_objective(D, X, A, lam))
        active = active[~done]
    return A, SolveInfo(iterations, converged, residual, history)


def code_signals(
    D: np.ndarray,
    X: np.ndarray,
    lam: float,
    opts: SolverOptions | None = None,
    init: np.ndarray | None = None,
    record: bool = False,
) -> tuple[np.ndarray, SolveInfo]:
    """Code every column of ``X`` over ``D`` without raising on non-convergence.

    ``init`` warm-starts the solver; since both algorithms are monotone the
    result never has a larger objective than ``init`` (or than zero).
    """
    opts = opts or SolverOptions()
    D = np.asarray(D, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or D.ndim != 2 or X.shape[0] != D.shape[0]:
        raise ValueError(f"dimension mismatch: dictionary {D.shape}, signals {X.shape}")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    K, m = D.shape[1], X.shape[1]
    Z0 = np.zeros((K, m)) if init is None else np.asarray(init, dtype=float)
    if Z0.shape != (K, m):
        raise ValueError(f"initial codes have shape {Z0.shape}, expected {(K, m)}")
    if m == 0:
        return Z0.copy(), SolveInfo(np.zeros(0, int), np.zeros(0, bool), np.zeros(0))
    if not np.any(D):
        A = np.zeros((K, m))
        return A, SolveInfo(np.zeros(m, int), np.ones(m, bool), np.zeros(m))
    if opts.algorithm == COORDINATE_DESCENT:
        return _lasso_cd(D, X, lam, Z0, opts, record)
    return _lasso_pg(D, X, lam, Z0, opts, record)


def lasso_solve(problem: SparseCodeProblem, opts: SolverOptions | None = None) -> np.ndarray:
    """Solve ``min_a ||x - D a||^2 + lam ||a||_1`` for a single signal.

    Raises
    ------
    ConvergenceError
        If the KKT residual is still above ``opts.kkt_tolerance`` after
        ``opts.max_iterations`` iterations.
    """
    opts = opts or SolverOptions()
    A, info = code_signals(problem.dictionary, problem.signal[:, None], problem.lam, opts)
    if not info.converged[0]:
        raise ConvergenceError(
            f"lasso did not converge in {opts.max_iterations} iterations "
            f"(KKT residual {info.residual[0]:.3e})",
            residual=float(info.residual[0]),
        )
    return A[:, 0]


def batch_sparse_code(
    dictionary: np.ndarray,
    signals: np.ndarray,
    lam: float,
    opts: SolverOptions | None = None,
    init: np.ndarray | None = None,
) -> np.ndarray:
    """Code each column of ``signals`` independently; returns the ``K x N`` code matrix."""
    opts = opts or SolverOptions()
    A, info = code_signals(dictionary, signals, lam, opts, init)
    bad = np.flatnonzero(~info.converged)
    if bad.size:
        j = int(bad[0])
        raise ConvergenceError(
            f"lasso did not converge for column {j} "
            f"(KKT residual {info.residual[j]:.3e}, {bad.size} column(s) failed)",
            residual=float(info.residual[j]),
            column=j,
        )
    return A
