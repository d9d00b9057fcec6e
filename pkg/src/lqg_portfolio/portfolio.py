"""PnL accounting, cost matrices, no-arbitrage diagnostics and analytic performance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import LQGError, NotStabilizable, UnstableClosedLoop
from .solvers import DareSolution, SolverConfig, is_stabilizable, solve_dare
from .statespace import LinearStateSpace, simulate

SQRT_YEAR = math.sqrt(250)
POPOV_TOL = 1e-10
ZERO_RISK_TOL = 1e-14


@dataclass(frozen=True)
class OutputSelectors:
    """Maps from the observation vector to positions and the two return kinds."""

    pi_q: np.ndarray
    pi_dec: np.ndarray
    pi_exe: np.ndarray

    def __post_init__(self):
        for name in ("pi_q", "pi_dec", "pi_exe"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))
        shapes = {self.pi_q.shape, self.pi_dec.shape, self.pi_exe.shape}
        if len(shapes) != 1:
            raise ValueError(f"selectors must share a shape, got {sorted(shapes)}")

    @property
    def n_assets(self) -> int:
        return self.pi_q.shape[0]

    @property
    def returns(self) -> np.ndarray:
        """Stacked [pi_dec; pi_exe]."""
        return np.vstack([self.pi_dec, self.pi_exe])

    @classmethod
    def from_labels(
        cls,
        output_labels: Sequence[str],
        position: str | Sequence[str],
        decision: str | Sequence[str],
        execution: str | Sequence[str],
    ) -> "OutputSelectors":
        labels = list(output_labels)

        def pick(names):
            names = [names] if isinstance(names, str) else list(names)
            M = np.zeros((len(names), len(labels)))
            for r, name in enumerate(names):
                M[r, labels.index(name)] = 1.0
            return M

        return cls(pick(position), pick(decision), pick(execution))


@dataclass(frozen=True)
class CostMatrices:
    """Per-step cost x'Qx + 2x'Nq + q'Rq = lam * Var(PnL | F_t) - E(PnL | F_t)."""

    Q: np.ndarray
    N: np.ndarray
    R: np.ndarray
    lam: float
    sigma_cond: np.ndarray

    @property
    def block(self) -> np.ndarray:
        return np.block([[self.Q, self.N], [self.N.T, self.R]])


@dataclass(frozen=True)
class PerformanceMetrics:
    avg_pnl: float
    avg_risk: float
    sharpe_yearly: float
    lam: float
    zero_risk: bool = False
    pnl_se: float | None = None
    risk_se: float | None = None
    sharpe_se: float | None = None
    realized_pnl: float | None = None
    realized_pnl_se: float | None = None


class Verdict(str, Enum):
    NO_ARBITRAGE = "NoArbitrage"
    ARBITRAGE = "ArbitrageDetected"
    BOUNDARY = "Boundary"


@dataclass(frozen=True)
class ArbitrageReport:
    stabilizable: bool
    stabilizing_solution_exists: bool
    popov_min_eig: float
    grid_size: int
    verdict: Verdict
    tolerance: float = POPOV_TOL
    dare: DareSolution | None = None
    dare_failure: str = ""
    popov_argmin: float = 0.0

    @property
    def consistent(self) -> bool:
        """Riccati and frequency-domain verdicts agree."""
        return self.stabilizing_solution_exists == (self.popov_min_eig > self.tolerance)

    def summary(self) -> dict:
        return {
            "stabilizable": self.stabilizable,
            "stabilizing_solution_exists": self.stabilizing_solution_exists,
            "popov_min_eig": self.popov_min_eig,
            "popov_argmin_angle": self.popov_argmin,
            "grid_size": self.grid_size,
            "verdict": self.verdict.value,
            "consistent": self.consistent,
            "dare_failure": self.dare_failure,
        }


def pnl_step(Q_t, q_t, r_dec, r_exe) -> float:
    """One-step PnL: carry on the held position plus execution return on the trade."""
    Q_t, q_t, r_dec, r_exe = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (Q_t, q_t, r_dec, r_exe))
    if not (Q_t.shape == q_t.shape == r_dec.shape == r_exe.shape):
        raise ValueError("pnl_step inputs must have equal lengths")
    return float(Q_t @ r_dec + q_t @ r_exe)


def _positions(trades: np.ndarray) -> np.ndarray:
    return np.vstack([np.zeros((1, trades.shape[1])), np.cumsum(trades, axis=0)])


def _as_trades(trades) -> np.ndarray:
    q = np.asarray(trades, dtype=float)
    return q[:, None] if q.ndim == 1 else q


def round_trip_identity_check(trades, prices_dec, prices_exe, tol: float = 1e-9) -> tuple[float, float]:
    """Cumulative PnL of a round trip computed two ways.

    ``prices_dec`` holds p_0..p_T and ``prices_exe[t]`` the execution price
    paid for trade t (between t and t+1). Returns (sum of stepwise PnL,
    -sum of trade * execution price).
    """
    q = _as_trades(trades)
    T = q.shape[0]
    p = np.asarray(prices_dec, dtype=float).reshape(T + 1, -1)
    pbar = np.asarray(prices_exe, dtype=float).reshape(T, -1)
    Q = _positions(q)
    if np.any(np.abs(Q[-1]) > tol * max(1.0, np.abs(q).max(initial=0.0))):
        raise ValueError(f"not a round trip: final position {Q[-1]}")
    r_dec = np.diff(p, axis=0)
    r_exe = p[1:] - pbar
    lhs = float(np.sum(Q[:-1] * r_dec) + np.sum(q * r_exe))
    rhs = float(-np.sum(q * pbar))
    return lhs, rhs


def _check_dims(ss: LinearStateSpace, sel: OutputSelectors) -> None:
    if sel.pi_q.shape[1] != ss.d:
        raise ValueError(f"selectors have {sel.pi_q.shape[1]} columns, model has {ss.d} outputs")
    if sel.n_assets != ss.p:
        raise ValueError(f"selectors pick {sel.n_assets} assets, model has {ss.p} inputs")


def conditional_sigma(ss: LinearStateSpace, omega_x=None) -> np.ndarray:
    """Var(y_{t+1} | F_t) = sigma_y + C (sigma_x + A omega_x A') C'."""
    Om = np.zeros((ss.n, ss.n)) if omega_x is None else np.asarray(omega_x, float)
    S = ss.sigma_y + ss.C @ (ss.sigma_x + ss.A @ Om @ ss.A.T) @ ss.C.T
    return 0.5 * (S + S.T)


def conditional_pnl_moments(ss, sel, omega_x, x, q) -> tuple[float, float]:
    """E and Var of next-step PnL given filtered state x and trade q, evaluated directly."""
    x = np.asarray(x, float)
    q = np.atleast_1d(np.asarray(q, float))
    Q_t = sel.pi_q @ ss.C @ x
    y_next = ss.C @ (ss.A @ x + ss.B @ q)
    mean = Q_t @ sel.pi_dec @ y_next + q @ sel.pi_exe @ y_next
    w = sel.pi_dec.T @ Q_t + sel.pi_exe.T @ q
    var = w @ conditional_sigma(ss, omega_x) @ w
    return float(mean), float(var)


def build_cost_matrices(ss: LinearStateSpace, sel: OutputSelectors, lam: float, omega_x=None) -> CostMatrices:
    """Quadratic form in (x_t, q_t) of lam * Var(PnL | F_t) - E(PnL | F_t).

    With z = (x, q), the held and traded quantities are w = W z where
    W = blockdiag(pi_q C, I), and the next returns are
    Y y_{t+1} with Y = [pi_dec; pi_exe], E(y_{t+1} | F_t) = C [A B] z. Hence
    Var = z' W' Y S Y' W z and E = z' W' Y C [A B] z.
    """
    if not lam > 0:
        raise ValueError(f"risk aversion must be positive, got {lam}")
    _check_dims(ss, sel)
    n, p = ss.n, ss.p
    Sig = conditional_sigma(ss, omega_x)
    W = np.zeros((2 * p, n + p))
    W[:p, :n] = sel.pi_q @ ss.C
    W[p:, n:] = np.eye(p)
    Y = sel.returns
    E = W.T @ Y @ ss.C @ np.hstack([ss.A, ss.B])
    M = lam * (W.T @ Y @ Sig @ Y.T @ W) - 0.5 * (E + E.T)
    M = 0.5 * (M + M.T)
    return CostMatrices(Q=M[:n, :n], N=M[:n, n:], R=M[n:, n:], lam=float(lam), sigma_cond=Sig)


def popov_sweep(A, B, cost: CostMatrices, K, grid_size: int = 1024) -> tuple[float, float]:
    """Minimum eigenvalue of the Hermitian part of Phi_K(z) over a unit-circle grid.

    Phi_K(z) = G(z)^H M G(z) with G(z) = [(zI - A_K)^-1 B; I + K (zI - A_K)^-1 B]
    and M the cost block matrix. Returns (min eigenvalue, angle at the minimum).
    """
    n, p = B.shape
    AK = A + B @ K
    theta = 2 * np.pi * np.arange(grid_size) / grid_size
    z = np.exp(1j * theta)
    Zs = z[:, None, None] * np.eye(n)[None] - AK[None]
    X = np.linalg.solve(Zs, np.broadcast_to(B.astype(complex), (grid_size, n, p)))
    G = np.concatenate([X, np.eye(p)[None] + K[None] @ X], axis=1)
    Phi = np.conj(np.transpose(G, (0, 2, 1))) @ cost.block[None] @ G
    Phi = 0.5 * (Phi + np.conj(np.transpose(Phi, (0, 2, 1))))
    mins = np.linalg.eigvalsh(Phi)[:, 0]
    k = int(np.argmin(mins))
    return float(mins[k]), float(theta[k])


def check_no_arbitrage(
    ss: LinearStateSpace,
    sel: OutputSelectors,
    lam: float,
    cfg: SolverConfig | None = None,
    grid_size: int = 1024,
    omega_x=None,
    tol: float = POPOV_TOL,
) -> ArbitrageReport:
    """Riccati stabilizing-solution test plus the Popov frequency sweep.

    ``omega_x`` defaults to the steady-state filtered covariance.
    """
    if grid_size < 64:
        raise ValueError("grid_size must be >= 64")
    cfg = cfg or SolverConfig()
    pbh = is_stabilizable(ss.A, ss.B, witness=True)
    if not pbh:
        raise NotStabilizable("(A, B) is not stabilizable; no policy can control the position")
    if omega_x is None:
        from .lqg import solve_kalman

        try:
            omega_x = solve_kalman(ss, cfg).omega
        except LQGError:
            omega_x = np.zeros((ss.n, ss.n))
    cost = build_cost_matrices(ss, sel, lam, omega_x)
    dare, failure = None, ""
    try:
        dare = solve_dare(ss.A, ss.B, cost.Q, cost.N, cost.R, cfg)
    except LQGError as exc:
        failure = f"{type(exc).__name__}: {exc}"
    K = dare.K if dare is not None else pbh.witness
    mn, arg = popov_sweep(ss.A, ss.B, cost, K, grid_size)
    exists = dare is not None
    if abs(mn) <= tol:
        verdict = Verdict.BOUNDARY
    elif exists and mn > tol:
        verdict = Verdict.NO_ARBITRAGE
    else:
        verdict = Verdict.ARBITRAGE
    return ArbitrageReport(True, exists, mn, grid_size, verdict, tol, dare, failure, arg)


def round_trip_pnl(ss: LinearStateSpace, sel: OutputSelectors, trades) -> float:
    """Deterministic PnL of an open-loop trade sequence from rest (no noise)."""
    q = _as_trades(trades)
    traj = simulate(ss, q)
    Y = traj.block("y")
    Q = Y @ sel.pi_q.T
    rd = Y @ sel.pi_dec.T
    re = Y @ sel.pi_exe.T
    return float(np.sum(Q[:-1] * rd[1:]) + np.sum(q * re[1:]))


def round_trip_quadratic_form(ss: LinearStateSpace, sel: OutputSelectors, T: int) -> np.ndarray:
    """Symmetric H with round_trip_pnl(q) = vec(q)' H vec(q) for T trades from rest."""
    p = ss.p
    m = T * p
    Y = np.zeros((m, T + 1, ss.d))
    for k in range(m):
        t, i = divmod(k, p)
        x = ss.B[:, i].copy()
        for s in range(t + 1, T + 1):
            Y[k, s] = ss.C @ x
            x = ss.A @ x
    Pq = Y @ sel.pi_q.T
    Pd = Y @ sel.pi_dec.T
    Pe = Y @ sel.pi_exe.T
    H = np.einsum("ktn,ltn->kl", Pq[:, :-1], Pd[:, 1:])
    for k in range(m):
        t, i = divmod(k, p)
        H[k] += Pe[:, t + 1, i]
    return 0.5 * (H + H.T)


def best_round_trip(ss: LinearStateSpace, sel: OutputSelectors, T: int = 40) -> tuple[np.ndarray, float]:
    """Most profitable unit-norm round trip of T trades (net trade zero per asset).

    Returns the trades (T, p) and their deterministic PnL.
    """
    p = ss.p
    H = round_trip_quadratic_form(ss, sel, T)
    Cons = np.kron(np.ones((1, T)), np.eye(p))
    _, s, Vt = np.linalg.svd(Cons)
    Z = Vt[p:].T
    w, U = np.linalg.eigh(Z.T @ H @ Z)
    q = (Z @ U[:, -1]).reshape(T, p)
    # orient as buy-first
    first = np.flatnonzero(np.abs(q) > 1e-12)
    if first.size and q.flat[first[0]] < 0:
        q = -q
    return q, round_trip_pnl(ss, sel, q)


def random_round_trip(rng: np.random.Generator, T: int, p: int = 1, damping: float = 0.2) -> np.ndarray:
    """Random trades whose position decays geometrically and is closed at step T-1."""
    q = np.zeros((T, p))
    Q = np.zeros(p)
    for t in range(T - 1):
        q[t] = rng.standard_normal(p) - (1.0 - damping) * Q
        Q = Q + q[t]
    q[-1] = -Q
    return q


def analytic_performance(cl, sel: OutputSelectors, lam: float) -> PerformanceMetrics:
    """Steady-state average PnL and risk of the closed loop from its stationary moments.

    With s_t = (y_t, x_hat_t) and Psi = E[s s'], the conditional mean of the
    next PnL is linear in s and its conditional variance is
    s' blockdiag(pi_q, K)' M3 blockdiag(pi_q, K) s, M3 = Y S Y'.
    """
    ss = cl.ss
    if cl.radius >= 1.0:
        raise UnstableClosedLoop(f"closed-loop spectral radius {cl.radius:.6g} >= 1")
    n = ss.n
    A, B, C, K = ss.A, ss.B, ss.C, cl.K
    V, Vh = cl.V, cl.V_hat
    E_xhat_y = cl.V_aug[n:, :n] @ C.T + cl.L @ ss.sigma_y
    ABK = A + B @ K
    pnl = float(
        np.trace(sel.pi_q.T @ sel.pi_dec @ C @ ABK @ E_xhat_y)
        + np.trace(K.T @ sel.pi_exe @ C @ ABK @ Vh)
    )
    Psi = np.block([[C @ V @ C.T + ss.sigma_y, E_xhat_y.T], [E_xhat_y, Vh]])
    Y = sel.returns
    M3 = Y @ conditional_sigma(ss, cl.kal.omega) @ Y.T
    p = ss.p
    M2 = np.zeros((2 * p, ss.d + n))
    M2[:p, : ss.d] = sel.pi_q
    M2[p:, ss.d :] = K
    var = max(float(np.trace(M2.T @ M3 @ M2 @ Psi)), 0.0)
    risk = math.sqrt(var)
    zero = risk <= ZERO_RISK_TOL
    sharpe = float("nan") if zero else SQRT_YEAR * pnl / risk
    return PerformanceMetrics(pnl, risk, sharpe, float(lam), zero_risk=zero)
