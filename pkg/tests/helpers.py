"""Shared test fixtures-in-code: toy problems and independent oracles."""

import math

import numpy as np

from cnmpc.continuation import DecisionVector, OcpDims, OcpSpec


def quadratic_spec(n_steps=3, a=0.5, b=1.0, q=1.0, r=1.0, s=2.0):
    """Scalar LQ problem: linear dynamics, quadratic costs, no constraints.

    The stationarity residual is affine in the decision vector, so Newton
    converges in one step and the difference operator is exactly linear.
    """
    dims = OcpDims(n_x=1, n_u=1, n_c=0, n_psi=0, n_p=0, N=n_steps)

    def f(tau, x, u, p):
        return np.array([a * x[0] + b * u[0]])

    def H_u(tau, x, lam, u, mu, p):
        return np.array([r * u[0] + b * lam[0]])

    def H_x(tau, x, lam, u, mu, p):
        return np.array([q * x[0] + a * lam[0]])

    def phi_x(tau, x, p):
        return np.array([s * x[0]])

    return OcpSpec(dims=dims, f=f, H_u=H_u, H_x=H_x, phi_x=phi_x)


def random_decision(dims, seed):
    """Bounded random point in the benchmark's decision space."""
    rng = np.random.default_rng(seed)
    U = DecisionVector.zeros(dims)
    for i in range(dims.N):
        U.u(i)[:] = np.column_stack([rng.uniform(0.3, 1.3), rng.uniform(-0.4, 0.4)])[0]
        U.mu(i)[:] = rng.uniform(-1.0, 1.0, dims.n_c)
    U.nu()[:] = rng.uniform(-1.0, 1.0, dims.n_psi)
    U.p()[:] = rng.uniform(0.5, 2.0, dims.n_p)
    return U


def lagrangian_scalar(c, n, z, x0):
    """Independent oracle: discrete Lagrangian with states eliminated by the
    forward recursion.  Its exact gradient is the stacked residual."""
    dtau = 1.0 / n
    us = z[: 2 * n].reshape(n, 2)
    mus = z[2 * n : 3 * n]
    nu = z[3 * n : 3 * n + 2]
    p = z[3 * n + 2]
    x, y = x0
    total = 0.0
    for i in range(n):
        u, ud = us[i]
        total += dtau * (-p * c.w_d * ud)
        total += dtau * mus[i] * ((u - c.c_u) ** 2 + ud**2 - c.r_u**2)
        speed = c.A * x + c.B
        x, y = x + dtau * p * speed * math.cos(u), y + dtau * p * speed * math.sin(u)
    total += p
    total += nu[0] * (x - c.x_f) + nu[1] * (y - c.y_f)
    return total


def central_residual_oracle(c, n, U, x0, step=1e-4):
    """Central finite differences of the scalar Lagrangian, coordinate-wise."""
    z = U.data
    out = np.empty(z.size)
    for j in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[j] += step
        zm[j] -= step
        out[j] = (lagrangian_scalar(c, n, zp, x0) - lagrangian_scalar(c, n, zm, x0)) / (2 * step)
    return out
