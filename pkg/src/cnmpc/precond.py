"""Scheduled LU preconditioning for the per-step Krylov solves.

The dense difference Jacobian is assembled column by column at configured
time instances, factored once, and the triangular factors are reused for all
sampling points until the next rebuild.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .continuation import OcpSpec, DecisionVector, assemble_jacobian, difference_operator, symmetrize
from .krylov import LUFactors, SingularMatrixError, lu_factor, lu_solve

__all__ = [
    "PrecondConfig",
    "PrecondState",
    "StalePreconditionerWarning",
    "should_rebuild",
    "rebuild",
    "apply",
    "as_operator",
]


class StalePreconditionerWarning(RuntimeWarning):
    """A rebuild hit a singular Jacobian; previous factors stay in use."""


@dataclass(frozen=True)
class PrecondConfig:
    """Rebuild schedule and factorization options.

    ``eps_t`` absorbs floating-point drift of the sampling grid against the
    rebuild period; the simulator sets it to half the sampling period.
    """

    enabled: bool = True
    t_p: float = 0.2
    symmetrize_before_factor: bool = False
    eps_t: float = 0.0

    def __post_init__(self) -> None:
        if self.enabled and self.t_p <= 0.0:
            raise ValueError("rebuild period t_p must be positive when enabled")


@dataclass
class PrecondState:
    """Current factors plus bookkeeping; replaced wholesale at rebuilds."""

    factors: Optional[LUFactors] = None
    built_at: Optional[float] = None
    rebuild_count: int = 0
    stale: bool = False


def should_rebuild(cfg: PrecondConfig, state: PrecondState, t: float) -> bool:
    """True when the schedule calls for fresh factors at time t."""
    if not cfg.enabled:
        return False
    if state.built_at is None:
        return True
    return t >= state.built_at + cfg.t_p - cfg.eps_t


def rebuild(
    spec: OcpSpec,
    U: DecisionVector,
    x: np.ndarray,
    t: float,
    fd_step: float,
    cfg: PrecondConfig,
    prev: Optional[PrecondState] = None,
) -> PrecondState:
    """Assemble and factor the difference Jacobian at the current point.

    A singular factorization keeps the previous factors (a stale
    preconditioner beats a sudden conditioning cliff), emits a warning, and
    marks the state stale; the control loop is never halted from here.
    """
    prev = prev if prev is not None else PrecondState()
    A = assemble_jacobian(difference_operator(spec, U, x, t, fd_step))
    if cfg.symmetrize_before_factor:
        A = symmetrize(A)
    try:
        factors = lu_factor(A)
    except SingularMatrixError as exc:
        warnings.warn(
            f"preconditioner rebuild at t={t:g} hit a singular Jacobian ({exc}); "
            "keeping previous factors",
            StalePreconditionerWarning,
            stacklevel=2,
        )
        return PrecondState(
            factors=prev.factors,
            built_at=prev.built_at,
            rebuild_count=prev.rebuild_count,
            stale=True,
        )
    return PrecondState(factors=factors, built_at=t, rebuild_count=prev.rebuild_count + 1)


def apply(state: PrecondState, r: np.ndarray) -> np.ndarray:
    """Triangular-solve action of the factors; identity while none are built."""
    if state.factors is None:
        return np.asarray(r, dtype=float)
    return lu_solve(state.factors, r)


def as_operator(state: PrecondState):
    """Closure view of :func:`apply` for handing to the Krylov solvers."""

    def op(r: np.ndarray) -> np.ndarray:
        return apply(state, r)

    return op
