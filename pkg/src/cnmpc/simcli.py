"""Closed-loop receding-horizon simulator and command-line front end.

Runs the minimum-time benchmark under four canonical solver configurations
(unpreconditioned baseline and three preconditioned variants), logging
per-step diagnostics to CSV and supporting run-to-run comparison reports.
"""

from __future__ import annotations

import argparse
import math
import statistics
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import precond
from .continuation import ColdStartError, ContinuationEngine, continuation_step, initial_solve
from .mintime import MinTimeConstants, initial_guess, plant_rate, problem_spec

__all__ = [
    "PRESETS",
    "SimConfig",
    "StepRecord",
    "SimResult",
    "RunComparison",
    "run_simulation",
    "write_csv",
    "read_csv",
    "compare_runs",
    "parse_cli",
    "main",
]

# Canonical experiment cases: an unpreconditioned baseline saturating its
# iteration budget, and three preconditioned variants trading rebuild
# frequency against the per-step iteration cap.
PRESETS: dict[int, dict] = {
    1: {"precond_enabled": False, "k_max": 10},
    2: {"precond_enabled": True, "t_p": 0.2, "k_max": 1},
    3: {"precond_enabled": True, "t_p": 0.4, "k_max": 2},
    4: {"precond_enabled": True, "t_p": 0.4, "k_max": 10},
}

EXIT_USAGE = 2
EXIT_COLD_START = 3

CSV_HEADER = "step,t,x,y,u,u_d,p,norm_F,krylov_residual,iterations,rebuilt"


@dataclass
class SimConfig:
    """Simulation settings; presets fill the solver-related fields."""

    case_preset: Optional[int] = None
    dt: float = 0.02
    n_steps: int = 10
    h: float = 1e-5
    tol: float = 1e-5
    k_max: int = 10
    precond_enabled: bool = False
    t_p: float = 0.2
    solver: str = "gmres"
    t_end: float = 2.0
    stop_radius: float = 1e-2
    symmetrize_precond: bool = False
    cold_start_tol: float = 1e-6
    cold_start_max_newton: int = 50
    constants: MinTimeConstants = field(default_factory=MinTimeConstants)
    out_path: Optional[Path] = None

    def validate(self) -> None:
        if self.case_preset is not None and self.case_preset not in PRESETS:
            raise ValueError(f"case must be one of {sorted(PRESETS)}, got {self.case_preset}")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"N must be at least 1, got {self.n_steps}")
        if self.h <= 0.0:
            raise ValueError(f"h must be positive, got {self.h}")
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.k_max < 1:
            raise ValueError(f"kmax must be at least 1, got {self.k_max}")
        if self.t_p <= 0.0:
            raise ValueError(f"tp must be positive, got {self.t_p}")
        if self.t_end < 0.0:
            raise ValueError(f"tmax must be nonnegative, got {self.t_end}")
        if self.stop_radius <= 0.0:
            raise ValueError(f"stop_radius must be positive, got {self.stop_radius}")
        if self.solver not in ("gmres", "minres"):
            raise ValueError(f"solver must be gmres or minres, got {self.solver}")


@dataclass(frozen=True)
class StepRecord:
    """One CSV row: system step, state before the step, applied input, and
    solver diagnostics for that step."""

    step: int
    t: float
    x: float
    y: float
    u: float
    u_d: float
    p: float
    norm_F: float
    krylov_residual: float
    iterations: int
    rebuilt: bool


@dataclass
class SimResult:
    records: list[StepRecord]
    arrival_time: Optional[float]
    total_map_evals: int
    total_rebuild_evals: int
    decision_size: int


def run_simulation(
    cfg: SimConfig,
    measure: Optional[Callable[[int, float, np.ndarray], np.ndarray]] = None,
) -> SimResult:
    """Cold start at t0, then the receding-horizon loop.

    Each pass rebuilds the preconditioner when due, advances the tracked
    solution by one Krylov step, records diagnostics, and propagates the
    state with a model Euler step (or the ``measure`` hook when supplied, for
    externally sourced states).  The run stops at target arrival: either the
    distance to the goal falls below ``stop_radius`` or the time-to-go drops
    below one sampling period; ``t_end`` is a safety cap with no arrival.
    Identical configs produce identical outputs.
    """
    cfg.validate()
    consts = cfg.constants
    spec = problem_spec(consts, cfg.n_steps)
    m = spec.dims.decision_size

    init = initial_solve(
        spec,
        consts.start,
        consts.t0,
        initial_guess(consts, cfg.n_steps),
        tol_init=cfg.cold_start_tol,
        max_newton=cfg.cold_start_max_newton,
        fd_step=cfg.h,
    )
    if init.residual_norm > cfg.cold_start_tol:
        raise ColdStartError(
            f"cold start stalled at residual norm {init.residual_norm:.6e} "
            f"(target {cfg.cold_start_tol:g})",
            init.U,
            init.residual_norm,
        )

    engine = ContinuationEngine(
        U=init.U,
        fd_step=cfg.h,
        dt=cfg.dt,
        k_max=cfg.k_max,
        tol=cfg.tol,
        solver=cfg.solver,
        early_exit=True,
    )
    pcfg = precond.PrecondConfig(
        enabled=cfg.precond_enabled,
        t_p=cfg.t_p,
        symmetrize_before_factor=cfg.symmetrize_precond,
        eps_t=cfg.dt / 2.0,
    )
    pstate = precond.PrecondState()

    records: list[StepRecord] = []
    arrival: Optional[float] = None
    total_map_evals = 0
    total_rebuild_evals = 0
    x = consts.start
    i = 0
    while True:
        t = consts.t0 + i * cfg.dt
        if t >= cfg.t_end:
            break
        if math.hypot(x[0] - consts.x_f, x[1] - consts.y_f) <= cfg.stop_radius:
            arrival = t
            break
        rebuilt = False
        if precond.should_rebuild(pcfg, pstate, t):
            pstate = precond.rebuild(spec, engine.U, x, t, cfg.h, pcfg, prev=pstate)
            total_rebuild_evals += m
            rebuilt = True
        u_applied, diag = continuation_step(
            engine, spec, x, t, precond.as_operator(pstate) if cfg.precond_enabled else None
        )
        total_map_evals += diag.iterations
        records.append(
            StepRecord(
                step=i,
                t=t,
                x=float(x[0]),
                y=float(x[1]),
                u=float(u_applied[0]),
                u_d=float(u_applied[1]),
                p=float(engine.U.p()[0]),
                norm_F=diag.norm_F,
                krylov_residual=diag.krylov_residual,
                iterations=diag.iterations,
                rebuilt=rebuilt,
            )
        )
        x_next = x + cfg.dt * plant_rate(consts, x, u_applied)
        x = measure(i, t + cfg.dt, x_next) if measure is not None else x_next
        if float(engine.U.p()[0]) <= cfg.dt:
            # Horizon shorter than one sampling period: the goal is reached
            # within the next step.
            arrival = t + cfg.dt
            break
        i += 1
    return SimResult(
        records=records,
        arrival_time=arrival,
        total_map_evals=total_map_evals,
        total_rebuild_evals=total_rebuild_evals,
        decision_size=m,
    )


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(result: SimResult, path) -> None:
    """Write one diagnostics row per step; 17 significant digits round-trip."""
    path = Path(path)
    try:
        with path.open("w", encoding="ascii", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in result.records:
                fh.write(
                    f"{r.step},{_fmt(r.t)},{_fmt(r.x)},{_fmt(r.y)},{_fmt(r.u)},"
                    f"{_fmt(r.u_d)},{_fmt(r.p)},{_fmt(r.norm_F)},"
                    f"{_fmt(r.krylov_residual)},{r.iterations},{int(r.rebuilt)}\n"
                )
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv(path) -> list[StepRecord]:
    """Parse a file produced by :func:`write_csv` back into records."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="ascii").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read CSV from {path}: {exc}") from exc
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing or unexpected header")
    records = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 11:
            raise ValueError(f"{path}: malformed row {line!r}")
        records.append(
            StepRecord(
                step=int(parts[0]),
                t=float(parts[1]),
                x=float(parts[2]),
                y=float(parts[3]),
                u=float(parts[4]),
                u_d=float(parts[5]),
                p=float(parts[6]),
                norm_F=float(parts[7]),
                krylov_residual=float(parts[8]),
                iterations=int(parts[9]),
                rebuilt=bool(int(parts[10])),
            )
        )
    return records


@dataclass
class RunComparison:
    """Candidate-over-baseline ratios on the aligned step prefix."""

    steps_compared: int
    metrics: dict[str, tuple[float, float, float]]
    warnings: list[str]

    def to_text(self) -> str:
        lines = [f"steps compared: {self.steps_compared}"]
        for w in self.warnings:
            lines.append(f"warning: {w}")
        for name, (base, cand, ratio) in self.metrics.items():
            lines.append(f"{name}: baseline={base:.6g} candidate={cand:.6g} ratio={ratio:.6g}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["metric,baseline,candidate,ratio"]
        for name, (base, cand, ratio) in self.metrics.items():
            lines.append(f"{name},{_fmt(base)},{_fmt(cand)},{_fmt(ratio)}")
        return "\n".join(lines) + "\n"


def _ratio(base: float, cand: float) -> float:
    if base == 0.0:
        return 1.0 if cand == 0.0 else float("inf")
    return cand / base


def compare_runs(baseline: SimResult, candidate: SimResult) -> RunComparison:
    """Efficiency and quality ratios over the common step prefix.

    Reports total solver iterations, map evaluations with and without the
    preconditioner's column builds, and max/median residual norms.  Runs on
    disjoint grids yield an empty report with a warning; mismatched grid
    lengths are aligned on their common prefix.
    """
    warnings_list: list[str] = []
    n = min(len(baseline.records), len(candidate.records))
    common = 0
    for i in range(n):
        if baseline.records[i].t != candidate.records[i].t:
            break
        common += 1
    if common < max(len(baseline.records), len(candidate.records)):
        warnings_list.append(
            f"step grids differ; comparing the common prefix of {common} steps"
        )
    if common == 0:
        warnings_list.append("step grids are disjoint; nothing to compare")
        return RunComparison(steps_compared=0, metrics={}, warnings=warnings_list)

    base = baseline.records[:common]
    cand = candidate.records[:common]

    def totals(records: list[StepRecord], result: SimResult) -> tuple[float, float, float]:
        iters = float(sum(r.iterations for r in records))
        rebuild_evals = float(sum(result.decision_size for r in records if r.rebuilt))
        return iters, iters, iters + rebuild_evals

    b_it, b_solver, b_all = totals(base, baseline)
    c_it, c_solver, c_all = totals(cand, candidate)
    b_max = max(r.norm_F for r in base)
    c_max = max(r.norm_F for r in cand)
    b_med = statistics.median(r.norm_F for r in base)
    c_med = statistics.median(r.norm_F for r in cand)
    metrics = {
        "iterations_total": (b_it, c_it, _ratio(b_it, c_it)),
        "map_evals_solver": (b_solver, c_solver, _ratio(b_solver, c_solver)),
        "map_evals_with_rebuilds": (b_all, c_all, _ratio(b_all, c_all)),
        "norm_F_max": (b_max, c_max, _ratio(b_max, c_max)),
        "norm_F_median": (b_med, c_med, _ratio(b_med, c_med)),
    }
    return RunComparison(steps_compared=common, metrics=metrics, warnings=warnings_list)


_CONFIG_CONSTANT_KEYS = {
    "A": "A",
    "B": "B",
    "x0": "x0",
    "y0": "y0",
    "t0": "t0",
    "xf": "x_f",
    "yf": "y_f",
    "cu": "c_u",
    "ru": "r_u",
    "wd": "w_d",
}


def _parse_bool(token: str) -> bool:
    low = token.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {token!r}")


def load_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValueError(f"cannot read config file {path}: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        values[key] = value
    return values


def _config_from_sources(
    file_values: dict[str, str], args: argparse.Namespace
) -> SimConfig:
    """Merge defaults < preset < config file < explicit flags."""
    case: Optional[int] = args.case
    if case is None and "case" in file_values:
        case = int(file_values["case"])
    kwargs: dict = {}
    if case is not None:
        if case not in PRESETS:
            raise ValueError(f"case must be one of {sorted(PRESETS)}, got {case}")
        kwargs.update(PRESETS[case])
        kwargs["case_preset"] = case

    const_kwargs: dict = {}
    file_field_map = {
        "dt": ("dt", float),
        "N": ("n_steps", int),
        "h": ("h", float),
        "tol": ("tol", float),
        "kmax": ("k_max", int),
        "tp": ("t_p", float),
        "precond": ("precond_enabled", _parse_bool),
        "solver": ("solver", str),
        "tmax": ("t_end", float),
        "stop_radius": ("stop_radius", float),
        "symmetrize": ("symmetrize_precond", _parse_bool),
    }
    for key, value in file_values.items():
        if key == "case":
            continue
        if key in file_field_map:
            name, conv = file_field_map[key]
            try:
                kwargs[name] = conv(value)
            except ValueError as exc:
                raise ValueError(f"config key {key}: {exc}") from exc
        elif key in _CONFIG_CONSTANT_KEYS:
            const_kwargs[_CONFIG_CONSTANT_KEYS[key]] = float(value)
        else:
            raise ValueError(f"unknown config key {key!r}")

    flag_map = {
        "kmax": "k_max",
        "tp": "t_p",
        "solver": "solver",
        "dt": "dt",
        "N": "n_steps",
        "h": "h",
        "tol": "tol",
        "tmax": "t_end",
    }
    for flag, name in flag_map.items():
        value = getattr(args, flag)
        if value is not None:
            kwargs[name] = value
    if args.precond is not None:
        kwargs["precond_enabled"] = _parse_bool(args.precond)
    if args.out is not None:
        kwargs["out_path"] = Path(args.out)
    if const_kwargs:
        kwargs["constants"] = replace(MinTimeConstants(), **const_kwargs)
    return SimConfig(**kwargs)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnmpc-sim",
        description=(
            "Closed-loop minimum-time benchmark for the continuation NMPC solver. "
            "Precedence: explicit flags override config-file values, the file "
            "overrides the case preset, and the preset overrides defaults."
        ),
    )
    parser.add_argument("--case", type=int, choices=sorted(PRESETS), help="experiment preset")
    parser.add_argument("--kmax", type=int, help="max Krylov iterations per step")
    parser.add_argument("--tp", type=float, help="preconditioner rebuild period (s)")
    parser.add_argument("--precond", choices=["on", "off"], help="toggle preconditioning")
    parser.add_argument("--solver", choices=["gmres", "minres"], help="Krylov solver")
    parser.add_argument("--dt", type=float, help="system sampling period (s)")
    parser.add_argument("--N", type=int, help="horizon step count")
    parser.add_argument("--h", type=float, help="forward-difference step")
    parser.add_argument("--tol", type=float, help="Krylov relative tolerance")
    parser.add_argument("--tmax", type=float, help="simulation time cap (s)")
    parser.add_argument("--out", type=Path, help="write per-step diagnostics CSV here")
    parser.add_argument("--config", type=Path, help="key = value settings file")
    return parser


def parse_cli(argv: list[str]) -> SimConfig:
    """Build a validated configuration from CLI arguments.

    Usage problems (unknown flags, out-of-range values, missing inputs) exit
    with status 2 through the argparse error channel.
    """
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.case is None and args.config is None:
        parser.error("provide --case or --config")
    try:
        file_values = load_config_file(args.config) if args.config is not None else {}
        cfg = _config_from_sources(file_values, args)
        cfg.validate()
    except (ValueError, TypeError) as exc:
        parser.error(str(exc))
    return cfg


def main(argv: Optional[list[str]] = None) -> int:
    cfg = parse_cli(sys.argv[1:] if argv is None else argv)
    try:
        result = run_simulation(cfg)
    except ColdStartError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COLD_START
    if cfg.out_path is not None:
        write_csv(result, cfg.out_path)
    label = f"case {cfg.case_preset}" if cfg.case_preset is not None else "custom run"
    print(f"{label}: {len(result.records)} steps")
    if result.arrival_time is not None:
        print(f"arrival time: {result.arrival_time:.6g} s")
    else:
        print("no arrival (time cap reached)")
    print(
        f"solver iterations: {result.total_map_evals}, "
        f"preconditioner evaluations: {result.total_rebuild_evals}"
    )
    if cfg.out_path is not None:
        print(f"records written to {cfg.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
