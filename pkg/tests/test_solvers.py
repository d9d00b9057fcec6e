import time

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from lqg_portfolio.errors import (
    NoStabilizingSolution,
    NotStabilizable,
    RNotInvertible,
    UnstableA,
)
from lqg_portfolio.portfolio import build_cost_matrices
from lqg_portfolio.solvers import (
    SolverConfig,
    dare_residual,
    is_detectable,
    is_stabilizable,
    solve_dare,
    solve_lyapunov,
    spectral_radius,
)

# positive root of P^2 - 0.25 P - 1 = 0 and the matching gain -0.5 P / (1 + P)
P_SCALAR = 1.1327822185373186
K_SCALAR = -0.2655644370746374


def fixed_point_dare(A, B, Q, R, tol=1e-14, maxit=100000):
    P = Q.copy()
    for _ in range(maxit):
        S = R + B.T @ P @ B
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A)
        if np.max(np.abs(Pn - P)) < tol * max(1.0, np.abs(Pn).max()):
            return Pn
        P = Pn
    raise RuntimeError("fixed point did not converge")


def test_scalar_a_zero():
    sol = solve_dare(0.0, 1.0, 2.0, 0.0, 1.0)
    assert sol.P[0, 0] == pytest.approx(2.0, abs=1e-14)
    assert sol.K[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_scalar_half():
    t0 = time.perf_counter()
    sol = solve_dare(0.5, 1.0, 1.0, 0.0, 1.0)
    assert time.perf_counter() - t0 < 1.0
    assert sol.P[0, 0] == pytest.approx(P_SCALAR, abs=1e-12)
    assert sol.K[0, 0] == pytest.approx(K_SCALAR, abs=1e-12)
    assert sol.residual < 1e-12
    oracle = fixed_point_dare(np.array([[0.5]]), np.eye(1), np.eye(1), np.eye(1))
    assert oracle[0, 0] == pytest.approx(P_SCALAR, abs=1e-13)


def test_example_cost_problem(example):
    ss, sel = example
    c = build_cost_matrices(ss, sel, 1.0, np.zeros((5, 5)))
    sol = solve_dare(ss.A, ss.B, c.Q, c.N, c.R)
    assert sol.residual < 1e-10 and sol.closed_loop_radius < 1
    assert np.allclose(sol.P, sol.P.T, atol=1e-10)
    ref = sla.solve_discrete_are(ss.A, ss.B, c.Q, c.R, s=c.N)
    assert np.allclose(sol.P, ref, atol=1e-8)


def test_errors():
    with pytest.raises(RNotInvertible):
        solve_dare(0.5, 1.0, 1.0, 0.0, 0.0)
    with pytest.raises(NotStabilizable):
        solve_dare(2.0, 0.0, 1.0, 0.0, 1.0)
    # P^2 + P + 1 = 0 has no real root
    with pytest.raises(NoStabilizingSolution):
        solve_dare(1.0, 1.0, -1.0, 0.0, 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol_residual=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
def test_dare_matches_fixed_point(seed, n, p):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) * 0.8
    B = rng.standard_normal((n, p))
    Lq = rng.standard_normal((n, n))
    Q = Lq @ Lq.T + 0.1 * np.eye(n)
    Lr = rng.standard_normal((p, p))
    R = Lr @ Lr.T + 0.1 * np.eye(p)
    if not is_stabilizable(A, B):
        return
    sol = solve_dare(A, B, Q, None, R)
    ref = fixed_point_dare(A, B, Q, R)
    assert np.max(np.abs(sol.P - ref)) <= 1e-8 * max(1.0, np.abs(ref).max())
    assert sol.closed_loop_radius < 1
    assert dare_residual(A, B, Q, np.zeros((n, p)), R, sol.P) < 1e-12


def test_cross_term_against_scipy():
    rng = np.random.default_rng(11)
    for _ in range(10):
        n, p = 4, 2
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, p))
        M = rng.standard_normal((n + p, n + p))
        M = M @ M.T + 0.5 * np.eye(n + p)
        Q, N, R = M[:n, :n], M[:n, n:], M[n:, n:]
        sol = solve_dare(A, B, Q, N, R)
        ref = sla.solve_discrete_are(A, B, Q, R, s=N)
        assert np.allclose(sol.P, ref, rtol=1e-8, atol=1e-8)


def test_lyapunov_examples():
    E = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert np.allclose(solve_lyapunov(np.zeros((2, 2)), E), E)
    assert solve_lyapunov(0.5, 1.0)[0, 0] == pytest.approx(4 / 3, rel=1e-14)
    X = solve_lyapunov(np.diag([0.9, 0.5]), np.eye(2))
    assert np.allclose(X, np.diag([1 / 0.19, 4 / 3]), rtol=1e-13)
    with pytest.raises(UnstableA):
        solve_lyapunov(np.eye(2), np.eye(2))


def test_lyapunov_against_kronecker():
    rng = np.random.default_rng(5)
    for n in (1, 3, 6):
        A = rng.standard_normal((n, n))
        A *= 0.97 / spectral_radius(A)
        F = rng.standard_normal((n, n))
        E = F @ F.T
        X = solve_lyapunov(A, E)
        vec = np.linalg.solve(np.eye(n * n) - np.kron(A, A), E.reshape(-1))
        assert np.allclose(X, vec.reshape(n, n), rtol=1e-9, atol=1e-12)
        assert np.linalg.norm(X - A @ X @ A.T - E) < 1e-12 * np.linalg.norm(X)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_lyapunov_permutation_and_psd(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.1, 0.95) / spectral_radius(A)
    F = rng.standard_normal((n, rng.integers(1, n + 1)))
    E = F @ F.T
    X = solve_lyapunov(A, E)
    T = np.eye(n)[rng.permutation(n)]
    XT = solve_lyapunov(T @ A @ T.T, T @ E @ T.T)
    assert np.max(np.abs(XT - T @ X @ T.T)) <= 1e-10 * max(1.0, np.abs(X).max())
    assert np.linalg.eigvalsh(X).min() >= -1e-10


def test_spectral_radius(example):
    ss, _ = example
    assert spectral_radius(np.eye(3)) == 1.0
    assert spectral_radius(np.diag([0.3, -0.8])) == pytest.approx(0.8)
    assert spectral_radius(ss.A) == pytest.approx(1.0, abs=1e-12)
    assert sorted(np.round(np.abs(np.linalg.eigvals(ss.A)), 12)) == [0, 0, 0.8, 0.9, 1]


def test_stabilizable_example_and_witness(example):
    ss, _ = example
    res = is_stabilizable(ss.A, ss.B, witness=True)
    assert res and spectral_radius(ss.A + ss.B @ res.witness) < 1
    K_hand = np.array([[-0.5, 0, 0, 0, 0]])
    assert spectral_radius(ss.A + ss.B @ K_hand) < 1


def test_stabilizable_trivial_cases():
    assert not is_stabilizable(2.0, 0.0)
    assert is_stabilizable(np.diag([0.5, -0.3]), np.zeros((2, 1)))
    # complex unstable pair that only the second input reaches
    R = 1.1 * np.array([[np.cos(1), -np.sin(1)], [np.sin(1), np.cos(1)]])
    A = sla.block_diag(R, 0.5)
    assert not is_stabilizable(A, np.array([[0.0], [0.0], [1.0]]))
    assert is_stabilizable(A, np.array([[1.0], [0.0], [0.0]]))


def test_detectable(example):
    ss, _ = example
    assert is_detectable(ss.C, ss.A)
    assert not is_detectable(0.0, 2.0)
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4)) * 3
    assert is_detectable(np.eye(4), A)
