"""Continuation NMPC engine.

Evaluates the stacked optimality residual of the discretized horizon problem
via forward state / backward costate recursions, wraps its forward-difference
directional derivative as a matrix-free operator, and advances the stacked
unknown by one Krylov solve per system sampling period.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .krylov import LinearMap, Preconditioner, SingularMatrixError, dense_solve, gmres, minres

__all__ = [
    "OcpDims",
    "OcpSpec",
    "DecisionVector",
    "HorizonTrajectory",
    "ContinuationEngine",
    "StepDiagnostics",
    "InitialSolveResult",
    "TrajectoryDivergedError",
    "JacobianAssemblyError",
    "ColdStartError",
    "forward_states",
    "backward_costates",
    "horizon_trajectory",
    "optimality_residual",
    "difference_operator",
    "assemble_jacobian",
    "symmetrize",
    "continuation_step",
    "initial_solve",
]


class TrajectoryDivergedError(RuntimeError):
    """A recursion produced a non-finite state or costate."""

    def __init__(self, kind: str, step: int):
        super().__init__(f"{kind} recursion diverged at horizon step {step}")
        self.kind = kind
        self.step = step


class JacobianAssemblyError(RuntimeError):
    """Column-wise assembly failed; carries the failing column index."""

    def __init__(self, column: int):
        super().__init__(f"operator evaluation failed for column {column}")
        self.column = column


class ColdStartError(RuntimeError):
    """The initial stationarity solve could not make progress."""

    def __init__(self, message: str, best: Optional["DecisionVector"], residual_norm: float):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class OcpDims:
    """Dimensions of the discretized horizon problem.

    The stacked decision vector has size N*(n_u + n_c) + n_psi + n_p.
    """

    n_x: int
    n_u: int
    n_c: int
    n_psi: int
    n_p: int
    N: int

    def __post_init__(self) -> None:
        if min(self.n_x, self.n_u, self.N) < 1:
            raise ValueError("n_x, n_u and N must be at least 1")
        if min(self.n_c, self.n_psi, self.n_p) < 0:
            raise ValueError("dimensions must be nonnegative")

    @property
    def decision_size(self) -> int:
        return self.N * (self.n_u + self.n_c) + self.n_psi + self.n_p


@dataclass
class OcpSpec:
    """Problem definition consumed by the engine.

    Callbacks are pure functions of their arguments.  ``f`` is the horizon
    dynamics (already rescaled when the horizon is normalized), ``C`` the
    pointwise equality constraint, ``psi`` the terminal constraint, ``phi``
    the terminal cost, and ``H_*`` the partial derivatives of the Hamiltonian
    L + lam'f + mu'C.  Optional callbacks default to zero contributions.
    """

    dims: OcpDims
    f: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    H_u: Callable[..., np.ndarray]
    H_x: Optional[Callable[..., np.ndarray]] = None
    H_p: Optional[Callable[..., np.ndarray]] = None
    C: Optional[Callable[..., np.ndarray]] = None
    psi: Optional[Callable[..., np.ndarray]] = None
    psi_x: Optional[Callable[..., np.ndarray]] = None
    psi_p: Optional[Callable[..., np.ndarray]] = None
    phi: Optional[Callable[..., float]] = None
    phi_x: Optional[Callable[..., np.ndarray]] = None
    phi_p: Optional[Callable[..., np.ndarray]] = None
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if self.horizon <= 0.0:
            raise ValueError("horizon length must be positive")
        if self.dims.n_c > 0 and self.C is None:
            raise ValueError("n_c > 0 requires a constraint callback")
        if self.dims.n_psi > 0 and (self.psi is None or self.psi_x is None):
            raise ValueError("n_psi > 0 requires psi and psi_x callbacks")

    @property
    def dtau(self) -> float:
        return self.horizon / self.dims.N


@dataclass
class DecisionVector:
    """Stacked unknown [u_0..u_{N-1}, mu_0..mu_{N-1}, nu, p] with block accessors."""

    dims: OcpDims
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (self.dims.decision_size,):
            raise ValueError(
                f"expected data of length {self.dims.decision_size}, got {self.data.shape}"
            )

    @classmethod
    def zeros(cls, dims: OcpDims) -> "DecisionVector":
        return cls(dims, np.zeros(dims.decision_size))

    def _check_stage(self, i: int) -> None:
        if not 0 <= i < self.dims.N:
            raise IndexError(f"stage index {i} outside [0, {self.dims.N})")

    def u(self, i: int) -> np.ndarray:
        self._check_stage(i)
        d = self.dims
        return self.data[i * d.n_u : (i + 1) * d.n_u]

    def mu(self, i: int) -> np.ndarray:
        self._check_stage(i)
        d = self.dims
        base = d.N * d.n_u
        return self.data[base + i * d.n_c : base + (i + 1) * d.n_c]

    def nu(self) -> np.ndarray:
        d = self.dims
        base = d.N * (d.n_u + d.n_c)
        return self.data[base : base + d.n_psi]

    def p(self) -> np.ndarray:
        d = self.dims
        base = d.N * (d.n_u + d.n_c) + d.n_psi
        return self.data[base : base + d.n_p]

    def copy(self) -> "DecisionVector":
        return DecisionVector(self.dims, self.data.copy())


@dataclass(frozen=True)
class HorizonTrajectory:
    """States and costates on the horizon grid (lengths N+1)."""

    taus: np.ndarray
    states: np.ndarray
    costates: np.ndarray


def forward_states(spec: OcpSpec, x0: np.ndarray, U: DecisionVector) -> np.ndarray:
    """Explicit Euler forward recursion for the horizon states."""
    d = spec.dims
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (d.n_x,):
        raise ValueError(f"state must have length {d.n_x}")
    dtau = spec.dtau
    p = U.p()
    xs = np.empty((d.N + 1, d.n_x))
    xs[0] = x0
    for i in range(d.N):
        xs[i + 1] = xs[i] + dtau * np.asarray(spec.f(i * dtau, xs[i], U.u(i), p), dtype=float)
        if not np.isfinite(xs[i + 1]).all():
            raise TrajectoryDivergedError("state", i + 1)
    return xs


def backward_costates(spec: OcpSpec, states: np.ndarray, U: DecisionVector) -> np.ndarray:
    """Backward costate recursion from the terminal stationarity condition."""
    d = spec.dims
    dtau = spec.dtau
    p = U.p()
    tau_N = spec.horizon
    lam = np.empty((d.N + 1, d.n_x))
    lam_N = np.zeros(d.n_x)
    if spec.phi_x is not None:
        lam_N = lam_N + np.asarray(spec.phi_x(tau_N, states[d.N], p), dtype=float)
    if d.n_psi > 0:
        lam_N = lam_N + np.asarray(spec.psi_x(tau_N, states[d.N], p), dtype=float).T @ U.nu()
    lam[d.N] = lam_N
    for i in range(d.N - 1, -1, -1):
        lam[i] = lam[i + 1]
        if spec.H_x is not None:
            lam[i] = lam[i] + dtau * np.asarray(
                spec.H_x(i * dtau, states[i], lam[i + 1], U.u(i), U.mu(i), p), dtype=float
            )
        if not np.isfinite(lam[i]).all():
            raise TrajectoryDivergedError("costate", i)
    return lam


def horizon_trajectory(spec: OcpSpec, x0: np.ndarray, U: DecisionVector) -> HorizonTrajectory:
    """Convenience bundle of both recursions on the shared grid."""
    xs = forward_states(spec, x0, U)
    lam = backward_costates(spec, xs, U)
    taus = spec.dtau * np.arange(spec.dims.N + 1)
    return HorizonTrajectory(taus=taus, states=xs, costates=lam)


def optimality_residual(
    spec: OcpSpec, U: DecisionVector, x: np.ndarray, t: float = 0.0
) -> np.ndarray:
    """Stacked stationarity residual of the discrete horizon problem.

    Row order: Hamiltonian control gradients (times dtau) for each stage,
    constraint residuals (times dtau) for each stage, the terminal
    constraint, then the parameter gradient.  The layout mirrors
    :class:`DecisionVector`, which makes the derivative square and, up to the
    difference step, symmetric.  ``t`` is accepted for interface parity with
    time-varying problems; the recursions run on the normalized horizon grid.
    """
    d = spec.dims
    dtau = spec.dtau
    xs = forward_states(spec, x, U)
    lam = backward_costates(spec, xs, U)
    p = U.p()
    out = np.empty(d.decision_size)
    pos = 0
    for i in range(d.N):
        out[pos : pos + d.n_u] = dtau * np.asarray(
            spec.H_u(i * dtau, xs[i], lam[i + 1], U.u(i), U.mu(i), p), dtype=float
        )
        pos += d.n_u
    for i in range(d.N):
        if d.n_c:
            out[pos : pos + d.n_c] = dtau * np.asarray(
                spec.C(i * dtau, xs[i], U.u(i), p), dtype=float
            )
            pos += d.n_c
    tau_N = spec.horizon
    if d.n_psi:
        out[pos : pos + d.n_psi] = np.asarray(spec.psi(tau_N, xs[d.N], p), dtype=float)
        pos += d.n_psi
    if d.n_p:
        acc = np.zeros(d.n_p)
        if spec.phi_p is not None:
            acc = acc + np.asarray(spec.phi_p(tau_N, xs[d.N], p), dtype=float)
        if d.n_psi and spec.psi_p is not None:
            acc = acc + np.asarray(spec.psi_p(tau_N, xs[d.N], p), dtype=float).T @ U.nu()
        if spec.H_p is not None:
            for i in range(d.N):
                acc = acc + dtau * np.asarray(
                    spec.H_p(i * dtau, xs[i], lam[i + 1], U.u(i), U.mu(i), p), dtype=float
                )
        out[pos : pos + d.n_p] = acc
    return out


def difference_operator(
    spec: OcpSpec,
    U: DecisionVector,
    x: np.ndarray,
    t: float,
    step: float,
    base: Optional[np.ndarray] = None,
) -> LinearMap:
    """Forward-difference directional derivative of the residual at U.

    ``apply(V)`` returns (F[U + step*V] - F[U]) / step; the base residual is
    evaluated once at construction, so each apply costs a single residual
    evaluation.
    """
    if step <= 0.0:
        raise ValueError("difference step must be positive")
    dims = U.dims
    data = U.data.copy()
    x = np.asarray(x, dtype=float).copy()
    if base is None:
        base = optimality_residual(spec, DecisionVector(dims, data), x, t)
    else:
        base = np.asarray(base, dtype=float).copy()

    def apply(v: np.ndarray) -> np.ndarray:
        shifted = DecisionVector(dims, data + step * np.asarray(v, dtype=float))
        return (optimality_residual(spec, shifted, x, t) - base) / step

    return LinearMap(dims.decision_size, apply)


def assemble_jacobian(
    op: LinearMap, parallel: bool = False, max_workers: Optional[int] = None
) -> np.ndarray:
    """Dense matrix of the operator, column j = apply(e_j).

    Columns are independent pure evaluations, so the optional thread pool
    yields bitwise-identical output to the sequential loop.
    """
    m = op.dim

    def column(j: int) -> np.ndarray:
        e = np.zeros(m)
        e[j] = 1.0
        try:
            return np.asarray(op.apply(e), dtype=float)
        except Exception as exc:
            raise JacobianAssemblyError(j) from exc

    if parallel:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            cols = list(pool.map(column, range(m)))
    else:
        cols = [column(j) for j in range(m)]
    return np.column_stack(cols)


def symmetrize(A: np.ndarray) -> np.ndarray:
    """Exact arithmetic mean of A and its transpose."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return (A + A.T) / 2.0


@dataclass
class StepDiagnostics:
    """Per-step solver diagnostics returned by :func:`continuation_step`."""

    norm_F: float
    krylov_residual: float
    iterations: int
    converged: bool
    breakdown: bool
    degraded: bool


@dataclass
class ContinuationEngine:
    """Holds the tracked decision vector and per-step solver settings.

    One engine advances one control loop; steps are strictly ordered and the
    engine is not shared across threads.
    """

    U: DecisionVector
    fd_step: float = 1e-5
    dt: float = 0.02
    k_max: int = 10
    tol: float = 1e-5
    solver: str = "gmres"
    early_exit: bool = True
    step_index: int = 0

    def __post_init__(self) -> None:
        if self.fd_step <= 0.0:
            raise ValueError("fd_step must be positive")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.solver not in ("gmres", "minres"):
            raise ValueError(f"unknown solver {self.solver!r}")


def continuation_step(
    engine: ContinuationEngine,
    spec: OcpSpec,
    x_meas: np.ndarray,
    t: float,
    precond: Optional[Preconditioner] = None,
) -> tuple[np.ndarray, StepDiagnostics]:
    """Advance the tracked solution by one sampling period.

    Solves a(W) = -F/h for the difference operator a at the current point
    with initial guess W = 0, applies the update U += h*W, and returns the
    first control block of the updated vector.  Solver failures never raise:
    a breakdown or a rejected preconditioner yields the best available
    (possibly zero) update and a degraded flag, keeping the control loop
    alive.
    """
    base = optimality_residual(spec, engine.U, x_meas, t)
    norm_F = float(np.linalg.norm(base))
    op = difference_operator(spec, engine.U, x_meas, t, engine.fd_step, base=base)
    rhs = -base / engine.fd_step
    solve = gmres if engine.solver == "gmres" else minres
    try:
        result = solve(
            op,
            precond,
            rhs,
            x0=np.zeros(op.dim),
            k_max=engine.k_max,
            tol=engine.tol,
            early_exit=engine.early_exit,
        )
    except ValueError:
        # Mid-solve contract violation (e.g. indefinite preconditioner with
        # MINRES): keep the previous solution rather than halting the loop.
        result = None

    if result is None:
        delta = np.zeros(op.dim)
        diag = StepDiagnostics(
            norm_F=norm_F,
            krylov_residual=float("inf"),
            iterations=0,
            converged=False,
            breakdown=True,
            degraded=True,
        )
    else:
        delta = engine.fd_step * result.x
        diag = StepDiagnostics(
            norm_F=norm_F,
            krylov_residual=result.relative_residual,
            iterations=result.iterations,
            converged=result.converged,
            breakdown=result.breakdown,
            degraded=result.breakdown and not result.converged,
        )
    engine.U = DecisionVector(engine.U.dims, engine.U.data + delta)
    engine.step_index += 1
    return engine.U.u(0).copy(), diag


class InitialSolveResult(NamedTuple):
    U: DecisionVector
    residual_norm: float
    newton_iterations: int


def initial_solve(
    spec: OcpSpec,
    x0: np.ndarray,
    t0: float,
    U_guess: DecisionVector,
    tol_init: float = 1e-6,
    max_newton: int = 50,
    fd_step: float = 1e-5,
) -> InitialSolveResult:
    """Damped Newton solve of the stationarity system for the cold start.

    Assembles the dense difference Jacobian each iteration, takes the direct
    Newton step, and backtracks on the residual norm (up to 20 halvings).
    Stops at ``tol_init`` or after ``max_newton`` iterations, returning the
    final iterate and its residual norm either way; a persistently singular
    Jacobian raises :class:`ColdStartError` carrying the best iterate.
    """
    U = U_guess.copy()
    F = optimality_residual(spec, U, x0, t0)
    norm = float(np.linalg.norm(F))
    m = spec.dims.decision_size
    iterations = 0
    for _ in range(max_newton):
        if norm <= tol_init:
            break
        op = difference_operator(spec, U, x0, t0, fd_step, base=F)
        A = assemble_jacobian(op)
        try:
            delta = dense_solve(A, -F)
        except SingularMatrixError:
            shift = 1e-10 * float(np.linalg.norm(A))
            try:
                delta = dense_solve(A + shift * np.eye(m), -F)
            except SingularMatrixError as exc:
                raise ColdStartError(
                    f"singular Jacobian in cold start (residual norm {norm:.3e})", U, norm
                ) from exc
        alpha = 1.0
        improved = False
        for _ in range(21):
            U_try = DecisionVector(U.dims, U.data + alpha * delta)
            try:
                F_try = optimality_residual(spec, U_try, x0, t0)
                norm_try = float(np.linalg.norm(F_try))
            except TrajectoryDivergedError:
                norm_try = float("inf")
            if norm_try < norm:
                U, F, norm = U_try, F_try, norm_try
                improved = True
                break
            alpha /= 2.0
        iterations += 1
        if not improved:
            break
    return InitialSolveResult(U=U, residual_norm=norm, newton_iterations=iterations)
