"""Minimum-time planar reach problem with a band-constrained heading.

A point moves in the plane with speed A*x + B along a heading u that must
stay inside the band [c_u - r_u, c_u + r_u]; the band inequality is encoded
as the circle equality (u - c_u)^2 + u_d^2 = r_u^2 through the slack control
u_d.  The goal is to pass through (x_f, y_f) in minimum time.  The horizon is
normalized to [0, 1], so the time-to-go p scales the horizon dynamics and the
running cost, and p doubles as the optimization parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .continuation import DecisionVector, OcpDims, OcpSpec

__all__ = [
    "MinTimeConstants",
    "problem_dims",
    "problem_spec",
    "dynamics",
    "plant_rate",
    "constraint_residual",
    "terminal_residual",
    "terminal_cost",
    "running_cost",
    "objective_value",
    "residual_rows",
    "initial_guess",
]


@dataclass(frozen=True)
class MinTimeConstants:
    """Plant and problem constants; defaults give the standard benchmark run."""

    A: float = 1.0
    B: float = 1.0
    c_u: float = 0.8
    r_u: float = 0.2
    w_d: float = 0.005
    x0: float = 0.0
    y0: float = 0.0
    t0: float = 0.0
    x_f: float = 1.0
    y_f: float = 1.0

    def __post_init__(self) -> None:
        if self.r_u <= 0.0:
            raise ValueError("band radius r_u must be positive")
        if self.w_d <= 0.0:
            raise ValueError("slack weight w_d must be positive")

    @property
    def start(self) -> np.ndarray:
        return np.array([self.x0, self.y0])

    @property
    def target(self) -> np.ndarray:
        return np.array([self.x_f, self.y_f])


def problem_dims(n_steps: int) -> OcpDims:
    """Horizon dimensions: planar state, (heading, slack) input, one band
    constraint, two terminal constraints, one parameter (time-to-go)."""
    return OcpDims(n_x=2, n_u=2, n_c=1, n_psi=2, n_p=1, N=n_steps)


def dynamics(c: MinTimeConstants, x: np.ndarray, u: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Horizon state rate in normalized time; the slack does not enter."""
    speed = p[0] * (c.A * x[0] + c.B)
    return np.array([speed * math.cos(u[0]), speed * math.sin(u[0])])


def plant_rate(c: MinTimeConstants, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Physical state rate in system time (no time-to-go scaling)."""
    speed = c.A * x[0] + c.B
    return np.array([speed * math.cos(u[0]), speed * math.sin(u[0])])


def constraint_residual(c: MinTimeConstants, u: np.ndarray) -> np.ndarray:
    """Circle form of the heading band; zero keeps u within the band."""
    return np.array([(u[0] - c.c_u) ** 2 + u[1] ** 2 - c.r_u**2])


def terminal_residual(c: MinTimeConstants, x: np.ndarray) -> np.ndarray:
    return np.array([x[0] - c.x_f, x[1] - c.y_f])


def terminal_cost(p: np.ndarray) -> float:
    """Terminal cost is the time-to-go itself."""
    return float(p[0])


def running_cost(c: MinTimeConstants, u: np.ndarray) -> float:
    """Slack-stabilizing running cost (pre-scaling, physical time)."""
    return -c.w_d * u[1]


def objective_value(c: MinTimeConstants, p: float, inputs) -> float:
    """Cost of a horizon plan: the time-to-go plus the slack reward.

    ``inputs`` is a sequence of (heading, slack) pairs; the integrand picks
    up the time-to-go factor from the normalized horizon.  An empty plan
    costs the terminal term alone.
    """
    total = float(p)
    n = len(inputs)
    if n:
        dtau = 1.0 / n
        total += sum(float(p) * running_cost(c, np.asarray(u)) * dtau for u in inputs)
    return total


def problem_spec(c: MinTimeConstants, n_steps: int) -> OcpSpec:
    """Problem definition with analytic partials on the normalized horizon.

    Integrand terms (running cost and dynamics) carry the time-to-go factor
    from the change of variables; the pointwise constraint and its multiplier
    are kept unscaled, which is the numerically preferable variant.
    """
    dims = problem_dims(n_steps)

    def f(tau, x, u, p):
        return dynamics(c, x, u, p)

    def C(tau, x, u, p):
        return constraint_residual(c, u)

    def psi(tau, x, p):
        return terminal_residual(c, x)

    def psi_x(tau, x, p):
        return np.eye(2)

    def psi_p(tau, x, p):
        return np.zeros((2, 1))

    def phi(tau, x, p):
        return terminal_cost(p)

    def phi_x(tau, x, p):
        return np.zeros(2)

    def phi_p(tau, x, p):
        return np.ones(1)

    def H_u(tau, x, lam, u, mu, p):
        speed = c.A * x[0] + c.B
        return np.array(
            [
                p[0] * speed * (-math.sin(u[0]) * lam[0] + math.cos(u[0]) * lam[1])
                + 2.0 * (u[0] - c.c_u) * mu[0],
                2.0 * mu[0] * u[1] - c.w_d * p[0],
            ]
        )

    def H_x(tau, x, lam, u, mu, p):
        return np.array(
            [p[0] * c.A * (math.cos(u[0]) * lam[0] + math.sin(u[0]) * lam[1]), 0.0]
        )

    def H_p(tau, x, lam, u, mu, p):
        speed = c.A * x[0] + c.B
        return np.array(
            [speed * (math.cos(u[0]) * lam[0] + math.sin(u[0]) * lam[1]) - c.w_d * u[1]]
        )

    return OcpSpec(
        dims=dims,
        f=f,
        C=C,
        psi=psi,
        psi_x=psi_x,
        psi_p=psi_p,
        phi=phi,
        phi_x=phi_x,
        phi_p=phi_p,
        H_u=H_u,
        H_x=H_x,
        H_p=H_p,
    )


def residual_rows(
    c: MinTimeConstants, U: DecisionVector, states: np.ndarray, costates: np.ndarray
) -> np.ndarray:
    """Stacked optimality rows written out directly for this problem.

    A second construction path for the same residual: heading and slack
    stationarity, the band constraint, the terminal mismatch, and the
    time-to-go stationarity row.  Must agree entrywise with the generic
    engine residual on :func:`problem_spec`.
    """
    d = U.dims
    N = d.N
    dtau = 1.0 / N
    p = U.p()[0]
    out = np.empty(d.decision_size)
    for i in range(N):
        u, ud = U.u(i)
        mu = U.mu(i)[0]
        l1, l2 = costates[i + 1]
        speed = c.A * states[i][0] + c.B
        out[2 * i] = dtau * (
            p * speed * (-math.sin(u) * l1 + math.cos(u) * l2) + 2.0 * (u - c.c_u) * mu
        )
        out[2 * i + 1] = dtau * (2.0 * mu * ud - c.w_d * p)
        out[2 * N + i] = dtau * ((u - c.c_u) ** 2 + ud**2 - c.r_u**2)
    out[3 * N] = states[N][0] - c.x_f
    out[3 * N + 1] = states[N][1] - c.y_f
    acc = 0.0
    for i in range(N):
        u, ud = U.u(i)
        l1, l2 = costates[i + 1]
        speed = c.A * states[i][0] + c.B
        acc += speed * (math.cos(u) * l1 + math.sin(u) * l2) - c.w_d * ud
    out[3 * N + 2] = dtau * acc + 1.0
    return out


def initial_guess(c: MinTimeConstants, n_steps: int) -> DecisionVector:
    """Deterministic warm-up point for the cold-start Newton solve.

    Heading at the band center, slack at half the band radius (interior, so
    the slack stationarity row stays regular), multipliers chosen to cancel
    that row exactly, small terminal multipliers, and the straight-line
    distance as the time-to-go guess.
    """
    dims = problem_dims(n_steps)
    U = DecisionVector.zeros(dims)
    p_guess = math.hypot(c.x_f - c.x0, c.y_f - c.y0)
    u_d = 0.5 * c.r_u
    mu = c.w_d * p_guess / (2.0 * u_d)
    for i in range(n_steps):
        U.u(i)[:] = (c.c_u, u_d)
        U.mu(i)[:] = mu
    U.nu()[:] = (0.1, 0.1)
    U.p()[:] = p_guess
    return U
