import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnmpc.krylov import (
    LinearMap,
    SingularMatrixError,
    dense_solve,
    gmres,
    hessenberg_lsq,
    lu_factor,
    lu_solve,
    minres,
)

EPS = np.finfo(float).eps


def matrix_map(A):
    A = np.asarray(A, dtype=float)
    return LinearMap(A.shape[0], lambda v: A @ v)


def random_spd(rng, m, kappa):
    """SPD matrix with uniformly spread eigenvalues in [1, kappa]."""
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    eigs = np.linspace(1.0, kappa, m)
    return (Q * eigs) @ Q.T


def random_spd_logspread(rng, m, kappa):
    """Harder spectrum: log-spaced eigenvalues (slow Krylov convergence)."""
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    eigs = np.geomspace(1.0, kappa, m)
    return (Q * eigs) @ Q.T


def random_symmetric_indefinite(rng, m, kappa):
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    eigs = np.linspace(1.0, kappa, m)
    eigs[::2] *= -1.0
    return (Q * eigs) @ Q.T


# ---------------------------------------------------------------------------
# gmres


def test_gmres_identity_one_step():
    b = np.array([1.0, 2.0, 3.0])
    res = gmres(matrix_map(np.eye(3)), None, b, k_max=3, tol=1e-12)
    assert np.allclose(res.x, b, atol=1e-14)
    assert res.iterations == 1
    assert res.converged


def test_gmres_diagonal_matches_direct_solve():
    A = np.diag([1.0, 2.0, 4.0])
    b = np.array([1.0, 2.0, 4.0])
    expected = dense_solve(A, b)  # oracle: direct factorization
    assert np.allclose(expected, [1.0, 1.0, 1.0])
    res = gmres(matrix_map(A), None, b, k_max=3, tol=1e-12)
    assert np.linalg.norm(res.x - expected) <= 1e-10
    assert np.linalg.norm(b - A @ res.x) <= 1e-10


def test_gmres_exact_preconditioner_one_iteration():
    rng = np.random.default_rng(7)
    A = random_spd(rng, 12, 1e3)
    factors = lu_factor(A)
    b = rng.standard_normal(12)
    res = gmres(matrix_map(A), lambda r: lu_solve(factors, r), b, k_max=12, tol=1e-10)
    assert res.iterations == 1
    assert res.converged
    assert np.linalg.norm(b - A @ res.x) <= 1e-8 * np.linalg.norm(b)


def test_gmres_zero_rhs_returns_initial_guess():
    res = gmres(matrix_map(np.eye(4)), None, np.zeros(4), k_max=4, tol=1e-10)
    assert res.iterations == 0
    assert res.converged
    assert np.all(res.x == 0.0)


def test_gmres_nonzero_initial_guess():
    rng = np.random.default_rng(3)
    A = random_spd(rng, 8, 50.0)
    b = rng.standard_normal(8)
    x0 = rng.standard_normal(8)
    res = gmres(matrix_map(A), None, b, x0=x0, k_max=8, tol=1e-13)
    assert np.linalg.norm(b - A @ res.x) <= 1e-9 * np.linalg.norm(b)


def test_gmres_early_exit_flag_controls_iterations():
    rng = np.random.default_rng(11)
    A = random_spd(rng, 10, 10.0)
    b = rng.standard_normal(10)
    eager = gmres(matrix_map(A), None, b, k_max=10, tol=1e-3, early_exit=True)
    fixed = gmres(matrix_map(A), None, b, k_max=10, tol=1e-3, early_exit=False)
    assert eager.iterations < 10
    assert fixed.iterations == 10


def test_gmres_respects_iteration_cap():
    rng = np.random.default_rng(5)
    A = random_spd(rng, 30, 1e3)
    b = rng.standard_normal(30)
    res = gmres(matrix_map(A), None, b, k_max=4, tol=1e-14)
    assert res.iterations == 4
    assert not res.converged


@settings(deadline=None, max_examples=20)
@given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=10_000))
def test_gmres_residual_estimate_monotone(m, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, m, 1e3)
    b = rng.standard_normal(m)
    res = gmres(matrix_map(A), None, b, k_max=m, tol=1e-12)
    hist = res.residual_history
    slack = 10 * EPS * hist[0]
    for a, b_ in zip(hist, hist[1:]):
        assert b_ <= a + slack


@settings(deadline=None, max_examples=15)
@given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=10_000))
def test_gmres_finite_termination(m, seed):
    rng = np.random.default_rng(seed)
    A = random_spd_logspread(rng, m, 1e3)
    b = rng.standard_normal(m)
    res = gmres(matrix_map(A), None, b, k_max=m, tol=0.0)
    assert np.linalg.norm(b - A @ res.x) <= 1e-8 * np.linalg.norm(b)


@settings(deadline=None, max_examples=15)
@given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=10_000))
def test_gmres_arnoldi_basis_orthonormal(m, seed):
    # At the solver's operating tolerance; pushing convergence to machine
    # level at k = m makes the last single-pass Gram-Schmidt vector marginal.
    rng = np.random.default_rng(seed)
    A = random_spd(rng, m, 1e3)
    b = rng.standard_normal(m)
    res = gmres(matrix_map(A), None, b, k_max=m, tol=1e-5, collect_basis=True)
    V = res.basis
    G = V.T @ V
    assert np.max(np.abs(G - np.eye(G.shape[0]))) <= 1e-8


def test_gmres_final_residual_matches_true_residual():
    rng = np.random.default_rng(17)
    A = random_spd(rng, 20, 100.0)
    b = rng.standard_normal(20)
    res = gmres(matrix_map(A), None, b, k_max=9, tol=1e-14)
    true = np.linalg.norm(b - A @ res.x)
    assert math.isclose(res.residual_norm, true, rel_tol=1e-6, abs_tol=1e-12)


# ---------------------------------------------------------------------------
# minres


def test_minres_identity_one_step():
    b = np.array([5.0, -5.0])
    res = minres(matrix_map(np.eye(2)), None, b, k_max=2, tol=1e-12)
    assert np.allclose(res.x, b, atol=1e-12)
    assert res.iterations == 1


def test_minres_exact_preconditioner_one_iteration():
    A = np.diag([1.0, 3.0])
    b = np.array([1.0, 3.0])
    factors = lu_factor(A)
    res = minres(matrix_map(A), lambda r: lu_solve(factors, r), b, k_max=2, tol=1e-12)
    assert res.iterations == 1
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-12)


def test_minres_random_symmetric_matches_direct_solve():
    rng = np.random.default_rng(23)
    A = random_spd(rng, 20, 500.0)
    b = rng.standard_normal(20)
    expected = dense_solve(A, b)
    res = minres(matrix_map(A), None, b, k_max=20, tol=1e-12)
    assert np.linalg.norm(res.x - expected) <= 1e-8 * np.linalg.norm(expected)


def test_minres_handles_indefinite_matrix():
    rng = np.random.default_rng(29)
    A = random_symmetric_indefinite(rng, 16, 100.0)
    b = rng.standard_normal(16)
    res = minres(matrix_map(A), None, b, k_max=48, tol=1e-11)
    assert np.linalg.norm(b - A @ res.x) <= 1e-7 * np.linalg.norm(b)


def test_minres_rejects_indefinite_preconditioner():
    A = np.eye(3)
    b = np.array([1.0, 1.0, 1.0])
    with pytest.raises(ValueError, match="positive definite"):
        minres(matrix_map(A), lambda r: -r, b, k_max=3, tol=1e-10)


@settings(deadline=None, max_examples=15)
@given(st.integers(min_value=2, max_value=30), st.integers(min_value=0, max_value=10_000))
def test_minres_gmres_agree_on_symmetric_systems(m, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, m, 1e3)
    b = rng.standard_normal(m)
    g = gmres(matrix_map(A), None, b, k_max=m, tol=1e-10)
    mres = minres(matrix_map(A), None, b, k_max=m, tol=1e-10)
    scale = np.linalg.norm(g.x)
    assert np.linalg.norm(g.x - mres.x) <= 1e-6 * scale


# ---------------------------------------------------------------------------
# hessenberg_lsq


def test_hessenberg_lsq_exactly_solvable():
    y, residual, deficient = hessenberg_lsq(np.array([[2.0], [0.0]]), 4.0)
    assert np.allclose(y, [2.0])
    assert residual <= 1e-14
    assert not deficient


def test_hessenberg_lsq_closed_form_normal_equations():
    # min over y of (y - 1)^2 + y^2 has minimizer 1/2, attained value 1/sqrt(2)
    y, residual, deficient = hessenberg_lsq(np.array([[1.0], [1.0]]), 1.0)
    assert np.allclose(y, [0.5])
    assert math.isclose(residual, 1.0 / math.sqrt(2.0), rel_tol=1e-14)
    assert not deficient


def test_hessenberg_lsq_degenerate_zero_columns():
    y, residual, deficient = hessenberg_lsq(np.zeros((1, 0)), 3.5)
    assert y.shape == (0,)
    assert residual == 3.5
    assert not deficient


def test_hessenberg_lsq_rank_deficient_minimum_norm():
    H = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    beta = 2.0
    y, residual, deficient = hessenberg_lsq(H, beta)
    assert deficient
    expect, *_ = np.linalg.lstsq(H, np.array([beta, 0.0, 0.0]), rcond=None)
    assert np.allclose(y, expect)
    assert residual <= 1e-12


@settings(deadline=None, max_examples=30)
@given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=10_000))
def test_hessenberg_lsq_matches_lstsq(k, seed):
    rng = np.random.default_rng(seed)
    H = np.triu(rng.standard_normal((k + 1, k)), -1)
    beta = float(rng.standard_normal())
    y, residual, deficient = hessenberg_lsq(H, beta)
    rhs = np.zeros(k + 1)
    rhs[0] = beta
    expect, *_ = np.linalg.lstsq(H, rhs, rcond=None)
    if not deficient:
        assert np.allclose(y, expect, atol=1e-8)
    assert math.isclose(residual, np.linalg.norm(H @ expect - rhs), rel_tol=1e-8, abs_tol=1e-10)


# ---------------------------------------------------------------------------
# LU factorization and direct solve


def test_lu_factor_permutation_matrix():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    f = lu_factor(A)
    assert np.array_equal(f.perm, [1, 0])
    assert np.array_equal(f.lower, np.eye(2))
    assert np.array_equal(f.upper, np.eye(2))


def test_lu_factor_scaled_identity():
    f = lu_factor(2.0 * np.eye(3))
    assert np.array_equal(f.perm, [0, 1, 2])
    assert np.array_equal(f.lower, np.eye(3))
    assert np.array_equal(f.upper, 2.0 * np.eye(3))


def test_lu_factor_random_reconstruction():
    rng = np.random.default_rng(42)
    A = rng.standard_normal((33, 33))
    f = lu_factor(A)
    err = np.linalg.norm(A[f.perm] - f.lower @ f.upper)
    assert err <= 1e-13 * np.linalg.norm(A)


def test_lu_factor_reports_singular_column():
    A = np.array([[1.0, 2.0], [0.0, 0.0]])
    with pytest.raises(SingularMatrixError) as err:
        lu_factor(A)
    assert err.value.column == 1


def test_lu_factor_rejects_nonfinite():
    with pytest.raises(ValueError):
        lu_factor(np.array([[1.0, np.nan], [0.0, 1.0]]))


@settings(deadline=None, max_examples=25)
@given(st.integers(min_value=1, max_value=60), st.integers(min_value=0, max_value=10_000))
def test_lu_backward_stability(m, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, m))
    f = lu_factor(A)
    assert np.all(np.diag(f.lower) == 1.0)
    assert np.linalg.norm(A[f.perm] - f.lower @ f.upper) <= 1e-12 * m * np.linalg.norm(A)


def test_lu_backward_stability_large():
    rng = np.random.default_rng(200)
    A = rng.standard_normal((200, 200))
    f = lu_factor(A)
    assert np.linalg.norm(A[f.perm] - f.lower @ f.upper) <= 1e-12 * 200 * np.linalg.norm(A)


def test_lu_solve_scaled_identity():
    f = lu_factor(2.0 * np.eye(2))
    assert np.allclose(lu_solve(f, np.array([4.0, 6.0])), [2.0, 3.0])


def test_lu_solve_swap_map():
    f = lu_factor(np.array([[0.0, 1.0], [1.0, 0.0]]))
    a, b = 3.25, -1.5
    assert np.allclose(lu_solve(f, np.array([a, b])), [b, a])


def test_lu_solve_residual():
    rng = np.random.default_rng(77)
    A = rng.standard_normal((33, 33))
    r = rng.standard_normal(33)
    z = lu_solve(lu_factor(A), r)
    assert np.linalg.norm(A @ z - r) <= 1e-10 * np.linalg.norm(r)


def test_dense_solve_identity_and_diagonal():
    b = np.array([3.0, -2.0])
    assert np.allclose(dense_solve(np.eye(2), b), b)
    assert np.allclose(dense_solve(np.diag([1.0, 2.0]), np.array([1.0, 2.0])), [1.0, 1.0])


def test_dense_solve_cross_checks_gmres():
    rng = np.random.default_rng(99)
    A = random_spd(rng, 15, 200.0)
    b = rng.standard_normal(15)
    direct = dense_solve(A, b)
    iterative = gmres(matrix_map(A), None, b, k_max=15, tol=1e-13)
    assert np.linalg.norm(direct - iterative.x) <= 1e-8 * np.linalg.norm(direct)


def test_dense_solve_propagates_singularity():
    with pytest.raises(SingularMatrixError):
        dense_solve(np.zeros((2, 2)), np.ones(2))
