"""Steady-state Kalman filter, LQR gain and the augmented closed-loop system."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NotDetectable, NotStabilizable, UnstableClosedLoop
from .solvers import (
    DareSolution,
    SolverConfig,
    is_detectable,
    is_stabilizable,
    solve_dare,
    solve_lyapunov,
    spectral_radius,
)
from .statespace import LinearStateSpace, full_rank_factor, psd_sqrt

PINV_RTOL = 1e-12
KALMAN_FP_MAX_ITER = 100_000


@dataclass(frozen=True)
class KalmanSolution:
    """Steady-state filter: gain L, predicted covariance omega_tilde, filtered covariance omega."""

    L: np.ndarray
    omega_tilde: np.ndarray
    omega: np.ndarray
    residual: float
    filter_radius: float
    exact_states: tuple[int, ...] = ()


@dataclass(frozen=True)
class KalmanFilterState:
    x_tilde: np.ndarray
    x_hat: np.ndarray

    def __post_init__(self):
        for name in ("x_tilde", "x_hat"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")


def exact_measurements(ss: LinearStateSpace, tol: float = 1e-14) -> dict[int, tuple[int, float]]:
    """States read directly and noise-free by some output row.

    Maps state index k to (output row j, coefficient c) when C[j] = c e_k and
    row j of sigma_y is zero. The first such row wins.
    """
    found: dict[int, tuple[int, float]] = {}
    for j, row in enumerate(ss.C):
        nz = np.flatnonzero(np.abs(row) > tol)
        if len(nz) != 1 or np.any(np.abs(ss.sigma_y[j]) > tol):
            continue
        k = int(nz[0])
        found.setdefault(k, (j, float(row[k])))
    return found


def noise_stabilizable(ss: LinearStateSpace) -> tuple[bool, bool]:
    """(reduced, strict) stabilizability of (A, sigma_x).

    The strict test uses a full-rank factor of sigma_x as input map. The
    reduced test drops the states that are measured exactly, whose filter
    error is identically zero and needs no noise excitation.
    """
    F = full_rank_factor(ss.sigma_x)
    strict = bool(is_stabilizable(ss.A, F))
    if strict:
        return True, True
    keep = [k for k in range(ss.n) if k not in exact_measurements(ss)]
    if not keep:
        return True, strict
    sub = np.ix_(keep, keep)
    reduced = bool(is_stabilizable(ss.A[sub], F[keep]))
    return reduced, strict


def _filter_residual(A, C, Sx, Sy, Om) -> float:
    S = Sy + C @ Om @ C.T
    Of = Om - Om @ C.T @ np.linalg.pinv(S, rcond=PINV_RTOL, hermitian=True) @ C @ Om
    res = Om - Sx - A @ Of @ A.T
    return float(np.linalg.norm(res) / max(1.0, np.linalg.norm(Om)))


def _fixed_point_filter(A, C, Sx, Sy, tol: float) -> np.ndarray:
    Om = Sx.copy()
    for _ in range(KALMAN_FP_MAX_ITER):
        S = Sy + C @ Om @ C.T
        Of = Om - Om @ C.T @ np.linalg.pinv(S, rcond=PINV_RTOL, hermitian=True) @ C @ Om
        new = Sx + A @ Of @ A.T
        new = 0.5 * (new + new.T)
        if not np.all(np.isfinite(new)):
            break
        if np.linalg.norm(new - Om) <= tol * max(1.0, np.linalg.norm(new)):
            return new
        Om = new
    raise ConvergenceError("filter Riccati recursion did not converge")


def solve_kalman(ss: LinearStateSpace, cfg: SolverConfig | None = None) -> KalmanSolution:
    """Steady-state Kalman filter for the model.

    Uses the dual Riccati equation (A', C', sigma_x, sigma_y) solved by
    doubling when sigma_y is invertible, otherwise the filter Riccati
    recursion with a pseudo-inverse innovation covariance.

    The gain is the minimum-norm one, except that rows of states measured
    exactly copy the measurement, so the filter restores them without lag.
    Both choices satisfy L (sigma_y + C omega_tilde C') = omega_tilde C'.
    """
    cfg = cfg or SolverConfig()
    A, C, Sx, Sy = ss.A, ss.C, ss.sigma_x, ss.sigma_y
    n = ss.n
    reduced, strict = noise_stabilizable(ss)
    if not reduced:
        raise NotStabilizable("(A, sigma_x) is not stabilizable on the unmeasured states")
    det = is_detectable(C, A)
    if not det:
        raise NotDetectable(
            "(C, A) has unobservable modes outside the open unit disc: "
            + ", ".join(f"{z:.6g}" for z in det.failing_eigenvalues)
        )
    Om = None
    if strict and ss.d and np.linalg.matrix_rank(Sy) == ss.d:
        try:
            Om = solve_dare(A.T, C.T, Sx, None, Sy, cfg).P
        except Exception:
            Om = None
    if Om is None:
        Om = _fixed_point_filter(A, C, Sx, Sy, min(cfg.tol_residual, 1e-14))
    Om = 0.5 * (Om + Om.T)
    S = Sy + C @ Om @ C.T
    L = Om @ C.T @ np.linalg.pinv(S, rcond=PINV_RTOL, hermitian=True)
    exact = exact_measurements(ss)
    for k, (j, c) in exact.items():
        L[k] = 0.0
        L[k, j] = 1.0 / c
    omega = Om - L @ C @ Om
    omega = 0.5 * (omega + omega.T)
    omega[np.abs(omega) < 1e-300] = 0.0
    rad = spectral_radius(A @ (np.eye(n) - L @ C))
    if rad >= 1.0:
        raise ConvergenceError(f"steady-state filter is unstable (radius {rad:.6g})")
    res = _filter_residual(A, C, Sx, Sy, Om)
    return KalmanSolution(L, Om, omega, res, rad, tuple(sorted(exact)))


def kalman_update(sol: KalmanSolution, ss: LinearStateSpace, x_tilde, y_t) -> np.ndarray:
    """Filtered estimate x_hat_t = x_tilde_t + L (y_t - C x_tilde_t)."""
    x_tilde = np.asarray(x_tilde, dtype=float)
    return x_tilde + sol.L @ (np.asarray(y_t, dtype=float) - ss.C @ x_tilde)


def kalman_step(
    sol: KalmanSolution,
    ss: LinearStateSpace,
    state: KalmanFilterState,
    y_t,
    q_t,
) -> KalmanFilterState:
    """Advance the filter one step.

    Returns x_hat_t (from the incoming prediction and y_t) together with the
    next prediction x_tilde_{t+1} = A x_hat_t + B q_t.
    """
    x_hat = kalman_update(sol, ss, state.x_tilde, y_t)
    x_next = ss.A @ x_hat + ss.B @ np.atleast_1d(np.asarray(q_t, dtype=float))
    return KalmanFilterState(x_tilde=x_next, x_hat=x_hat)


def solve_lqr(ss: LinearStateSpace, cost, cfg: SolverConfig | None = None) -> DareSolution:
    """LQR gain for the cost (Q, N, R); the policy is q_t = K x_hat_t."""
    return solve_dare(ss.A, ss.B, cost.Q, cost.N, cost.R, cfg)


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Joint dynamics of (x_t, x_hat_t) under the separation-principle controller.

    X_{t+1} = A_aug X_t + B_aug E_{t+1} with E = (eps^x, eps^y).
    """

    ss: LinearStateSpace
    kal: KalmanSolution
    lqr: DareSolution
    A_aug: np.ndarray
    B_aug: np.ndarray
    C_aug: np.ndarray
    noise_cov: np.ndarray
    V: np.ndarray
    V_hat: np.ndarray
    V_aug: np.ndarray
    radius: float

    @property
    def K(self) -> np.ndarray:
        return self.lqr.K

    @property
    def L(self) -> np.ndarray:
        return self.kal.L

    @property
    def noise_channels(self) -> dict[str, np.ndarray]:
        """Impulse directions in E-space, keyed by channel name.

        The model's named noise shocks enter through the noise map, so a unit
        shock has its natural scale; observation noise channels are unit
        coordinates of eps^y.
        """
        n, d = self.ss.n, self.ss.d
        out = {}
        for j, name in enumerate(self.ss.noise_labels):
            e = np.zeros(n + d)
            e[:n] = self.ss.noise_map[:, j]
            out[name] = e
        for i, s in enumerate(self.ss.state_labels):
            e = np.zeros(n + d)
            e[i] = 1.0
            out.setdefault(f"epsx_{s}", e)
        for i, s in enumerate(self.ss.output_labels):
            e = np.zeros(n + d)
            e[n + i] = 1.0
            out[f"epsy_{s}"] = e
        return out


def closed_loop_matrices(A, B, C, K, L) -> tuple[np.ndarray, np.ndarray]:
    n, d = A.shape[0], C.shape[0]
    LC = L @ C
    A_aug = np.block([[A, B @ K], [LC @ A, A + B @ K - LC @ A]])
    B_aug = np.block([[np.eye(n), np.zeros((n, d))], [LC, L]])
    return A_aug, B_aug


def build_closed_loop(ss: LinearStateSpace, kal: KalmanSolution, lqr: DareSolution) -> ClosedLoopSystem:
    n, d = ss.n, ss.d
    A_aug, B_aug = closed_loop_matrices(ss.A, ss.B, ss.C, lqr.K, kal.L)
    rad = spectral_radius(A_aug)
    if rad >= 1.0:
        raise UnstableClosedLoop(f"closed-loop spectral radius {rad:.6g} >= 1")
    noise_cov = np.zeros((n + d, n + d))
    noise_cov[:n, :n] = ss.sigma_x
    noise_cov[n:, n:] = ss.sigma_y
    E = B_aug @ noise_cov @ B_aug.T
    V_aug = solve_lyapunov(A_aug, 0.5 * (E + E.T), tol=1e-10)
    C_aug = np.hstack([ss.C, np.zeros((d, n))])
    for M in (A_aug, B_aug, C_aug, noise_cov, V_aug):
        M.setflags(write=False)
    return ClosedLoopSystem(
        ss=ss,
        kal=kal,
        lqr=lqr,
        A_aug=A_aug,
        B_aug=B_aug,
        C_aug=C_aug,
        noise_cov=noise_cov,
        V=V_aug[:n, :n],
        V_hat=V_aug[n:, n:],
        V_aug=V_aug,
        radius=rad,
    )


def simulate_controller_loop(
    ss: LinearStateSpace,
    kal: KalmanSolution,
    K: np.ndarray,
    eps_x: np.ndarray,
    eps_y: np.ndarray,
    x0=None,
) -> dict[str, np.ndarray]:
    """Plant plus filter plus feedback, stepped explicitly.

    eps_x[t] drives x_{t+1} and eps_y[t] corrupts y_t (shapes (T, n) and
    (T+1, d)). The filter starts from x_tilde_0 = 0.
    """
    T = eps_x.shape[0]
    n, p = ss.n, ss.p
    X = np.zeros((T + 1, n))
    Xh = np.zeros((T + 1, n))
    Y = np.zeros((T + 1, ss.d))
    U = np.zeros((T + 1, p))
    X[0] = 0.0 if x0 is None else x0
    state = KalmanFilterState(np.zeros(n), np.zeros(n))
    for t in range(T + 1):
        Y[t] = ss.C @ X[t] + eps_y[t]
        Xh[t] = kalman_update(kal, ss, state.x_tilde, Y[t])
        U[t] = K @ Xh[t]
        state = kalman_step(kal, ss, state, Y[t], U[t])
        if t < T:
            X[t + 1] = ss.A @ X[t] + ss.B @ U[t] + eps_x[t]
    return {"x": X, "x_hat": Xh, "y": Y, "q": U}


def simulate_augmented(
    cl: ClosedLoopSystem, eps_x: np.ndarray, eps_y: np.ndarray, x0=None
) -> dict[str, np.ndarray]:
    """Simulate X_{t+1} = A_aug X_t + B_aug E_{t+1} with the same noise convention.

    The initial filtered state is matched to the filter started at
    x_tilde_0 = 0, i.e. x_hat_0 = L y_0.
    """
    ss = cl.ss
    n = ss.n
    T = eps_x.shape[0]
    Z = np.zeros((T + 1, 2 * n))
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    Z[0, :n] = x0
    Z[0, n:] = cl.L @ (ss.C @ x0 + eps_y[0])
    E = np.hstack([eps_x, eps_y[1:]])
    for t in range(T):
        Z[t + 1] = cl.A_aug @ Z[t] + cl.B_aug @ E[t]
    X, Xh = Z[:, :n], Z[:, n:]
    Y = X @ ss.C.T + eps_y
    return {"x": X, "x_hat": Xh, "y": Y, "q": Xh @ cl.K.T}


def draw_noise(ss: LinearStateSpace, T: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    Fx, Fy = psd_sqrt(ss.sigma_x), psd_sqrt(ss.sigma_y)
    return rng.standard_normal((T, ss.n)) @ Fx.T, rng.standard_normal((T + 1, ss.d)) @ Fy.T
