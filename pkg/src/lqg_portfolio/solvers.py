"""Riccati and Lyapunov solvers plus PBH structural tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    MaxIterExceeded,
    NoStabilizingSolution,
    NotStabilizable,
    ResidualError,
    RNotInvertible,
    UnstableA,
)

PBH_RANK_TOL = 1e-10
MARGINAL_TOL = 1e-9
R_DET_TOL = 1e-14


@dataclass(frozen=True)
class SolverConfig:
    tol_residual: float = 1e-12
    max_iter: int = 200
    stability_margin: float = 1e-9

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class DareSolution:
    P: np.ndarray
    K: np.ndarray
    residual: float
    closed_loop_radius: float
    iterations: int


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got {M.shape}")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def _as2d(M, rows: int | None = None) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        return M.reshape(1, 1)
    if M.ndim == 1:
        return M.reshape(rows if rows is not None else -1, -1)
    return M


def dare_residual(A, B, Q, N, R, P) -> float:
    """Relative Frobenius residual of the DARE with cross term."""
    S = R + B.T @ P @ B
    T = B.T @ P @ A + N.T
    res = P - Q - A.T @ P @ A + T.T @ np.linalg.solve(S, T)
    return float(np.linalg.norm(res) / max(1.0, np.linalg.norm(P)))


def _sda(A, B, Q, N, R, cfg: SolverConfig) -> DareSolution:
    """Structure-preserving doubling on the cross-term-free form.

    Raises NoStabilizingSolution on breakdown or a non-stabilizing limit;
    does not test stabilizability of (A, B).
    """
    n = A.shape[0]
    I = np.eye(n)
    try:
        Rinv_Nt = np.linalg.solve(R, N.T)
        Ak = A - B @ Rinv_Nt
        Hk = Q - N @ Rinv_Nt
        Gk = B @ np.linalg.solve(R, B.T)
    except np.linalg.LinAlgError as exc:
        raise RNotInvertible(str(exc)) from exc
    Hk = 0.5 * (Hk + Hk.T)
    Gk = 0.5 * (Gk + Gk.T)
    step_tol = min(cfg.tol_residual, 1e-13)
    converged = False
    it = 0
    with np.errstate(all="ignore"):
        for it in range(1, cfg.max_iter + 1):
            W = I + Gk @ Hk
            try:
                WA = np.linalg.solve(W, Ak)
                WG = np.linalg.solve(W, Gk)
            except np.linalg.LinAlgError as exc:
                raise NoStabilizingSolution(f"doubling breakdown at iteration {it}: {exc}") from exc
            Hn = Hk + Ak.T @ Hk @ WA
            Gn = Gk + Ak @ WG @ Ak.T
            Ak = Ak @ WA
            Hn = 0.5 * (Hn + Hn.T)
            Gk = 0.5 * (Gn + Gn.T)
            if not np.all(np.isfinite(Hn)):
                raise NoStabilizingSolution(f"doubling iteration diverged at iteration {it}")
            delta = np.linalg.norm(Hn - Hk)
            Hk = Hn
            if delta <= step_tol * max(1.0, np.linalg.norm(Hk)):
                converged = True
                break
    if not converged:
        raise MaxIterExceeded(f"doubling did not converge in {cfg.max_iter} iterations")
    P = Hk
    S = R + B.T @ P @ B
    try:
        K = -np.linalg.solve(S, B.T @ P @ A + N.T)
    except np.linalg.LinAlgError as exc:
        raise NoStabilizingSolution(f"R + B'PB is singular at the limit: {exc}") from exc
    rad = spectral_radius(A + B @ K)
    if not np.isfinite(rad) or rad >= 1.0:
        raise NoStabilizingSolution(
            f"Riccati limit is not stabilizing: spectral radius of A+BK is {rad:.6g}"
        )
    res = dare_residual(A, B, Q, N, R, P)
    return DareSolution(P=P, K=K, residual=res, closed_loop_radius=rad, iterations=it)


def _newton_refine(A, B, Q, N, R, sol: DareSolution, steps: int = 3) -> DareSolution:
    """Kleinman-Newton polishing from a stabilizing iterate."""
    best = sol
    P = sol.P
    for _ in range(steps):
        S = R + B.T @ P @ B
        K = -np.linalg.solve(S, B.T @ P @ A + N.T)
        AK = A + B @ K
        E = Q + N @ K + K.T @ N.T + K.T @ R @ K
        try:
            P = solve_lyapunov(AK.T, 0.5 * (E + E.T), check_psd=False)
        except (UnstableA, ConvergenceError, ResidualError):
            break
        res = dare_residual(A, B, Q, N, R, P)
        if res < best.residual:
            K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A + N.T)
            best = DareSolution(P, K, res, spectral_radius(A + B @ K), best.iterations)
    return best


def solve_dare(A, B, Q, N=None, R=None, cfg: SolverConfig | None = None) -> DareSolution:
    """Stabilizing solution of P = Q + A'PA - (A'PB + N)(R + B'PB)^-1 (B'PA + N').

    Parameters
    ----------
    A, B : arrays (n, n), (n, p)
    Q, N, R : arrays (n, n), (n, p), (p, p); N defaults to 0 and R to I.
    cfg : SolverConfig

    Returns
    -------
    DareSolution with gain K = -(R + B'PB)^-1 (B'PA + N') and rho(A + BK) < 1.

    Raises
    ------
    NotStabilizable, RNotInvertible, NoStabilizingSolution, MaxIterExceeded
    """
    cfg = cfg or SolverConfig()
    A = _as2d(A)
    n = A.shape[0]
    B = _as2d(B, rows=n)
    p = B.shape[1]
    Q = _as2d(Q)
    N = np.zeros((n, p)) if N is None else _as2d(N, rows=n)
    R = np.eye(p) if R is None else _as2d(R)
    scale = max(1.0, float(np.max(np.abs(R)))) ** p
    if abs(np.linalg.det(R)) < R_DET_TOL * scale:
        raise RNotInvertible(f"|det R| = {abs(np.linalg.det(R)):.3e} is numerically zero")
    pbh = is_stabilizable(A, B)
    if not pbh:
        raise NotStabilizable(
            "(A, B) has uncontrollable modes outside the open unit disc: "
            + ", ".join(f"{z:.6g}" for z in pbh.failing_eigenvalues)
        )
    sol = _sda(A, B, Q, N, R, cfg)
    if sol.residual >= cfg.tol_residual:
        sol = _newton_refine(A, B, Q, N, R, sol)
    if sol.residual >= cfg.tol_residual:
        raise ResidualError(f"DARE residual {sol.residual:.3e} exceeds {cfg.tol_residual:.1e}")
    return sol


def solve_lyapunov(A, E, tol: float = 1e-12, check_psd: bool = True) -> np.ndarray:
    """Solve X = A X A' + E by Smith squaring with residual refinement.

    Raises UnstableA when rho(A) >= 1.
    """
    A = _as2d(A)
    E = _as2d(E)
    if A.size == 0:
        return E.copy()
    rad = spectral_radius(A)
    if rad >= 1.0:
        raise UnstableA(f"spectral radius {rad:.6g} >= 1; no stationary solution")

    def smith(rhs):
        X = rhs.copy()
        Ak = A.copy()
        for _ in range(200):
            upd = Ak @ X @ Ak.T
            X = X + upd
            Ak = Ak @ Ak
            if np.linalg.norm(upd) <= 1e-14 * max(1e-300, np.linalg.norm(X)) or not np.any(Ak):
                return X
        raise ConvergenceError("Smith iteration did not converge")

    X = smith(E)
    X = 0.5 * (X + X.T)
    scale = max(np.linalg.norm(X), np.linalg.norm(E), 1e-300)
    for _ in range(3):
        res = X - A @ X @ A.T - E
        if np.linalg.norm(res) <= tol * scale:
            break
        X = X - smith(res)
        X = 0.5 * (X + X.T)
    res = np.linalg.norm(X - A @ X @ A.T - E)
    if res > tol * scale and res > 1e-300:
        raise ResidualError(f"Lyapunov relative residual {res / scale:.3e} exceeds {tol:.1e}")
    if check_psd and X.size:
        w = np.linalg.eigvalsh(X)
        if w.min() < -1e-10 * max(1.0, w.max()):
            raise ResidualError(f"Lyapunov solution has negative eigenvalue {w.min():.3e}")
    return X


@dataclass(frozen=True)
class PBHResult:
    """Outcome of a PBH rank test. Truthy iff the test passed."""

    ok: bool
    failing_eigenvalues: tuple[complex, ...] = ()
    witness: np.ndarray | None = field(default=None, repr=False)

    def __bool__(self) -> bool:
        return self.ok


def is_stabilizable(A, B, witness: bool = False) -> PBHResult:
    """PBH test: [A - zI | B] has full row rank for every |z| >= 1 - 1e-9.

    With ``witness=True`` a stabilizing gain from the auxiliary DARE
    (Q = I, R = I, N = 0) is attached.
    """
    A = _as2d(A)
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    failing = []
    for z in np.linalg.eigvals(A):
        if abs(z) < 1.0 - MARGINAL_TOL:
            continue
        M = np.hstack([A - z * np.eye(n), B.astype(complex)])
        s = np.linalg.svd(M, compute_uv=False)
        rank = int(np.sum(s > PBH_RANK_TOL * max(s[0], 1e-300))) if s.size else 0
        if rank < n:
            failing.append(complex(z))
    ok = not failing
    K = None
    if ok and witness:
        p = B.shape[1]
        if p == 0:
            K = np.zeros((0, n))
        else:
            K = _sda(A, B, np.eye(n), np.zeros((n, p)), np.eye(p), SolverConfig()).K
    return PBHResult(ok, tuple(failing), K)


def is_detectable(C, A) -> PBHResult:
    """(C, A) is detectable iff (A', C') is stabilizable."""
    A = _as2d(A)
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    return is_stabilizable(A.T, C.T)
