"""Matrix-free Krylov solvers with a dense LU backend.

GMRES (without restarts) and MINRES operate on an abstract matrix-vector
map, so the same code serves exact matrices and finite-difference
directional-derivative operators.  The LU routines back the preconditioner
and double as a direct-solve oracle in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

__all__ = [
    "LinearMap",
    "KrylovResult",
    "LUFactors",
    "SingularMatrixError",
    "gmres",
    "minres",
    "hessenberg_lsq",
    "HessenbergLsqResult",
    "lu_factor",
    "lu_solve",
    "dense_solve",
]

_EPS = float(np.finfo(float).eps)

Preconditioner = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LinearMap:
    """A dimension-preserving map ``v -> apply(v)``.

    The map may be mildly nonlinear (e.g. a forward-difference quotient of a
    nonlinear residual); the solvers only require that repeated calls on the
    same input return identical output.
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"map dimension must be positive, got {self.dim}")


@dataclass
class KrylovResult:
    """Outcome of one iterative solve."""

    x: np.ndarray
    residual_norm: float  # preconditioned residual estimate at exit
    iterations: int
    converged: bool
    breakdown: bool
    initial_residual_norm: float
    residual_history: list[float]
    basis: Optional[np.ndarray] = None

    @property
    def relative_residual(self) -> float:
        if self.initial_residual_norm == 0.0:
            return 0.0
        return self.residual_norm / self.initial_residual_norm


def _identity(r: np.ndarray) -> np.ndarray:
    return r


class _HessenbergLsq:
    """Incremental Givens-rotation least squares for Hessenberg systems.

    Columns arrive one per Arnoldi step; rotating the right-hand side along
    the way keeps the attained residual minimum available at no extra cost.
    """

    def __init__(self, beta: float):
        self.cs: list[float] = []
        self.sn: list[float] = []
        self.cols: list[np.ndarray] = []
        self.g: list[float] = [float(beta)]
        self.residual = abs(float(beta))

    def push(self, column: np.ndarray) -> float:
        """Fold in Hessenberg column k (length k+2); return the residual estimate."""
        k = len(self.cols)
        col = np.array(column, dtype=float)
        if col.shape != (k + 2,):
            raise ValueError(f"expected column of length {k + 2}, got {col.shape}")
        for j in range(k):
            a, b = col[j], col[j + 1]
            col[j] = self.cs[j] * a + self.sn[j] * b
            col[j + 1] = -self.sn[j] * a + self.cs[j] * b
        r = math.hypot(col[k], col[k + 1])
        if r == 0.0:
            c, s = 1.0, 0.0
        else:
            c, s = col[k] / r, col[k + 1] / r
        col[k] = r
        col[k + 1] = 0.0
        self.cs.append(c)
        self.sn.append(s)
        gk = self.g[k]
        self.g[k] = c * gk
        self.g.append(-s * gk)
        self.cols.append(col[: k + 1])
        self.residual = abs(self.g[-1])
        return self.residual

    def solve(self) -> tuple[np.ndarray, bool]:
        """Minimizer of the accumulated problem; lstsq fallback when R is singular."""
        k = len(self.cols)
        y = np.zeros(k)
        if k == 0:
            return y, False
        R = np.zeros((k, k))
        for j, col in enumerate(self.cols):
            R[: len(col), j] = col
        g = np.array(self.g[:k])
        scale = float(np.abs(R).max())
        diag = np.abs(R.diagonal())
        if scale == 0.0 or diag.min() <= _EPS * k * scale:
            y, *_ = np.linalg.lstsq(R, g, rcond=None)
            return y, True
        for i in range(k - 1, -1, -1):
            y[i] = (g[i] - R[i, i + 1 :] @ y[i + 1 :]) / R[i, i]
        return y, False


class HessenbergLsqResult(NamedTuple):
    y: np.ndarray
    residual: float
    rank_deficient: bool


def hessenberg_lsq(H: np.ndarray, beta: float) -> HessenbergLsqResult:
    """Solve ``min_y ||H y - beta*e1||_2`` for upper-Hessenberg H of shape (k+1, k).

    Returns the minimizer, the attained minimum, and a flag set when H was
    rank deficient (the minimum-norm solution is returned in that case).
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise ValueError("H must be a 2-d array")
    k = H.shape[1]
    if k > 0 and H.shape[0] != k + 1:
        raise ValueError(f"expected shape ({k + 1}, {k}), got {H.shape}")
    lsq = _HessenbergLsq(beta)
    for j in range(k):
        lsq.push(H[: j + 2, j])
    y, deficient = lsq.solve()
    return HessenbergLsqResult(y, lsq.residual, deficient)


def gmres(
    op: LinearMap,
    precond: Optional[Preconditioner],
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    k_max: Optional[int] = None,
    tol: float = 1e-10,
    early_exit: bool = True,
    collect_basis: bool = False,
) -> KrylovResult:
    """Preconditioned GMRES without restarts.

    Arnoldi runs on the preconditioned operator with one classical
    Gram-Schmidt pass per step; the Hessenberg least-squares problem is kept
    triangular by incremental Givens rotations, so the preconditioned
    residual estimate is available every iteration.  When ``early_exit`` is
    set, iteration stops once that estimate drops below ``tol`` times the
    initial preconditioned residual norm; disabling it reproduces the
    fixed-iteration behaviour.  A vanishing Arnoldi normalization is flagged
    as a (lucky) breakdown: the solution is exact in the current subspace and
    is returned with ``converged=True``.
    """
    m = op.dim
    b = np.asarray(b, dtype=float)
    if b.shape != (m,):
        raise ValueError(f"right-hand side must have length {m}")
    if k_max is None:
        k_max = m
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if tol < 0.0:
        raise ValueError("tol must be nonnegative")
    T = precond if precond is not None else _identity
    if x0 is None:
        x0 = np.zeros(m)
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (m,):
            raise ValueError(f"initial guess must have length {m}")

    # Both exactly linear maps and difference quotients vanish at 0, so the
    # initial residual needs no operator evaluation for a zero guess.
    r = b - np.asarray(op.apply(x0), dtype=float) if x0.any() else b.copy()
    z = np.asarray(T(r), dtype=float)
    beta = float(np.linalg.norm(z))
    history = [beta]
    if beta == 0.0:
        return KrylovResult(
            x=x0.copy(),
            residual_norm=0.0,
            iterations=0,
            converged=True,
            breakdown=False,
            initial_residual_norm=0.0,
            residual_history=history,
        )

    V = np.zeros((m, k_max + 1))
    V[:, 0] = z / beta
    lsq = _HessenbergLsq(beta)
    breakdown = False
    est = beta
    bd_tol = _EPS * beta
    k = 0
    while k < k_max:
        w = np.asarray(T(np.asarray(op.apply(V[:, k]), dtype=float)), dtype=float)
        hk = V[:, : k + 1].T @ w  # classical Gram-Schmidt, single pass
        w = w - V[:, : k + 1] @ hk
        hnorm = float(np.linalg.norm(w))
        est = lsq.push(np.append(hk, hnorm))
        history.append(est)
        k += 1
        if hnorm <= bd_tol:
            breakdown = True
            break
        V[:, k] = w / hnorm
        if early_exit and est <= tol * beta:
            break

    y, _ = lsq.solve()
    x = x0 + V[:, :k] @ y
    converged = breakdown or est <= tol * beta
    return KrylovResult(
        x=x,
        residual_norm=est,
        iterations=k,
        converged=converged,
        breakdown=breakdown,
        initial_residual_norm=beta,
        residual_history=history,
        basis=V[:, :k].copy() if collect_basis else None,
    )


def minres(
    op: LinearMap,
    precond: Optional[Preconditioner],
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    k_max: Optional[int] = None,
    tol: float = 1e-10,
    early_exit: bool = True,
) -> KrylovResult:
    """Preconditioned MINRES via the three-term Lanczos recurrence.

    Requires a (nearly) symmetric map and a symmetric positive definite
    preconditioner; a negative Lanczos inner product is reported as a
    ``ValueError`` since it indicates a violated caller contract.  Storage is
    a fixed handful of working vectors regardless of ``k_max``.  The residual
    estimate tracked is the preconditioner-weighted norm of ``b - op(x)``;
    convergence and early exit use the same relative criterion as
    :func:`gmres`.
    """
    m = op.dim
    b = np.asarray(b, dtype=float)
    if b.shape != (m,):
        raise ValueError(f"right-hand side must have length {m}")
    if k_max is None:
        k_max = m
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if tol < 0.0:
        raise ValueError("tol must be nonnegative")
    T = precond if precond is not None else _identity
    if x0 is None:
        x0 = np.zeros(m)
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (m,):
            raise ValueError(f"initial guess must have length {m}")

    x = x0.copy()
    r1 = b - np.asarray(op.apply(x0), dtype=float) if x0.any() else b.copy()
    y = np.asarray(T(r1), dtype=float)
    beta1_sq = float(r1 @ y)
    if beta1_sq < 0.0:
        raise ValueError("preconditioner is not positive definite (negative inner product)")
    beta1 = math.sqrt(beta1_sq)
    history = [beta1]
    if beta1 == 0.0:
        return KrylovResult(
            x=x,
            residual_norm=0.0,
            iterations=0,
            converged=True,
            breakdown=False,
            initial_residual_norm=0.0,
            residual_history=history,
        )

    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs = -1.0
    sn = 0.0
    w = np.zeros(m)
    w2 = np.zeros(m)
    r2 = r1
    itn = 0
    breakdown = False
    while itn < k_max:
        itn += 1
        v = y / beta
        y = np.asarray(op.apply(v), dtype=float)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = np.asarray(T(r2), dtype=float)
        oldb = beta
        beta_sq = float(r2 @ y)
        if beta_sq < 0.0:
            raise ValueError("preconditioner is not positive definite (negative inner product)")
        beta = math.sqrt(beta_sq)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), _EPS)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar
        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        history.append(phibar)
        if beta <= _EPS * beta1:
            breakdown = True
            break
        if early_exit and phibar <= tol * beta1:
            break

    converged = breakdown or phibar <= tol * beta1
    return KrylovResult(
        x=x,
        residual_norm=phibar,
        iterations=itn,
        converged=converged,
        breakdown=breakdown,
        initial_residual_norm=beta1,
        residual_history=history,
    )


class SingularMatrixError(ValueError):
    """Raised when Gaussian elimination meets an exactly zero pivot column."""

    def __init__(self, column: int):
        super().__init__(f"matrix is singular: no nonzero pivot in column {column}")
        self.column = column


@dataclass(frozen=True)
class LUFactors:
    """Row-pivoted triangular factors with ``A[perm] == lower @ upper``."""

    perm: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def order(self) -> int:
        return self.lower.shape[0]


def lu_factor(A: np.ndarray) -> LUFactors:
    """LU factorization with partial (maximal column entry) pivoting."""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.isfinite(A).all():
        raise ValueError("matrix entries must be finite")
    m = A.shape[0]
    perm = np.arange(m)
    for k in range(m):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if A[piv, k] == 0.0:
            raise SingularMatrixError(k)
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
        A[k + 1 :, k] /= A[k, k]
        A[k + 1 :, k + 1 :] -= np.outer(A[k + 1 :, k], A[k, k + 1 :])
    lower = np.tril(A, -1) + np.eye(m)
    upper = np.triu(A)
    return LUFactors(perm=perm, lower=lower, upper=upper)


def lu_solve(factors: LUFactors, r: np.ndarray) -> np.ndarray:
    """Solve the factored system by permutation plus two triangular sweeps."""
    r = np.asarray(r, dtype=float)
    m = factors.order
    if r.shape != (m,):
        raise ValueError(f"right-hand side must have length {m}")
    L, U = factors.lower, factors.upper
    y = r[factors.perm]
    for i in range(1, m):
        y[i] -= L[i, :i] @ y[:i]
    for i in range(m - 1, -1, -1):
        y[i] = (y[i] - U[i, i + 1 :] @ y[i + 1 :]) / U[i, i]
    return y


def dense_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct solve: factor then substitute.  Singular matrices propagate."""
    return lu_solve(lu_factor(A), b)
