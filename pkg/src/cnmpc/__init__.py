"""Continuation NMPC with preconditioned matrix-free Krylov solvers."""

from .continuation import (
    ColdStartError,
    ContinuationEngine,
    DecisionVector,
    HorizonTrajectory,
    InitialSolveResult,
    JacobianAssemblyError,
    OcpDims,
    OcpSpec,
    StepDiagnostics,
    TrajectoryDivergedError,
    assemble_jacobian,
    backward_costates,
    continuation_step,
    difference_operator,
    forward_states,
    horizon_trajectory,
    initial_solve,
    optimality_residual,
    symmetrize,
)
from .krylov import (
    KrylovResult,
    LinearMap,
    LUFactors,
    SingularMatrixError,
    dense_solve,
    gmres,
    hessenberg_lsq,
    lu_factor,
    lu_solve,
    minres,
)
from .mintime import MinTimeConstants, initial_guess, problem_dims, problem_spec
from .precond import PrecondConfig, PrecondState, should_rebuild
from .simcli import PRESETS, SimConfig, SimResult, StepRecord, compare_runs, run_simulation

__all__ = [
    "ColdStartError",
    "ContinuationEngine",
    "DecisionVector",
    "HorizonTrajectory",
    "InitialSolveResult",
    "JacobianAssemblyError",
    "KrylovResult",
    "LinearMap",
    "LUFactors",
    "MinTimeConstants",
    "OcpDims",
    "OcpSpec",
    "PRESETS",
    "PrecondConfig",
    "PrecondState",
    "SimConfig",
    "SimResult",
    "SingularMatrixError",
    "StepDiagnostics",
    "StepRecord",
    "TrajectoryDivergedError",
    "assemble_jacobian",
    "backward_costates",
    "compare_runs",
    "continuation_step",
    "dense_solve",
    "difference_operator",
    "forward_states",
    "gmres",
    "hessenberg_lsq",
    "horizon_trajectory",
    "initial_guess",
    "initial_solve",
    "lu_factor",
    "lu_solve",
    "minres",
    "optimality_residual",
    "problem_dims",
    "problem_spec",
    "run_simulation",
    "should_rebuild",
    "symmetrize",
]
