"""Experiment harness: Monte Carlo metrics, round trips, impulse studies, capacity curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LQGError, UnstableClosedLoop
from .lqg import ClosedLoopSystem, KalmanSolution, build_closed_loop, solve_kalman, solve_lqr
from .models import SeparableModelParams, build_separable_model
from .portfolio import (
    SQRT_YEAR,
    ZERO_RISK_TOL,
    CostMatrices,
    OutputSelectors,
    PerformanceMetrics,
    analytic_performance,
    build_cost_matrices,
    conditional_sigma,
    round_trip_identity_check,
)
from .solvers import DareSolution, SolverConfig
from .statespace import LinearStateSpace, Trajectory, psd_sqrt, simulate


@dataclass(frozen=True)
class MonteCarloSettings:
    T: int = 5000
    n_paths: int = 50
    seed: int = 0
    burn_in: int = 1000
    n_boot: int = 1000

    def __post_init__(self):
        if self.T < 1000:
            raise ValueError("T must be >= 1000")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.burn_in < 0 or self.n_boot < 1:
            raise ValueError("burn_in must be >= 0 and n_boot >= 1")


@dataclass(frozen=True)
class Pipeline:
    ss: LinearStateSpace
    sel: OutputSelectors
    lam: float
    kal: KalmanSolution
    cost: CostMatrices
    lqr: DareSolution
    cl: ClosedLoopSystem


def solve_pipeline(
    ss: LinearStateSpace,
    sel: OutputSelectors,
    lam: float,
    cfg: SolverConfig | None = None,
    kal: KalmanSolution | None = None,
) -> Pipeline:
    """Kalman filter, cost build, LQR and closed loop for one risk aversion."""
    kal = kal or solve_kalman(ss, cfg)
    cost = build_cost_matrices(ss, sel, lam, kal.omega)
    lqr = solve_lqr(ss, cost, cfg)
    cl = build_closed_loop(ss, kal, lqr)
    return Pipeline(ss, sel, float(lam), kal, cost, lqr, cl)


def path_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, i)))


def monte_carlo_metrics(
    cl: ClosedLoopSystem, sel: OutputSelectors, lam: float, settings: MonteCarloSettings | None = None
) -> PerformanceMetrics:
    """Estimate average conditional PnL mean and variance by simulating the closed loop.

    Every path has its own counter-derived generator, so results do not depend
    on how paths are batched. Standard errors come from a bootstrap over paths.
    """
    st = settings or MonteCarloSettings()
    if cl.radius >= 1.0:
        raise UnstableClosedLoop(f"closed-loop spectral radius {cl.radius:.6g} >= 1")
    ss = cl.ss
    n, d, P = ss.n, ss.d, st.n_paths
    steps = st.burn_in + st.T
    Fx, Fy = psd_sqrt(ss.sigma_x), psd_sqrt(ss.sigma_y)
    ex = np.empty((P, steps + 1, n))
    ey = np.empty((P, steps + 2, d))
    for i in range(P):
        rng = path_rng(st.seed, i)
        ex[i] = rng.standard_normal((steps + 1, n)) @ Fx.T
        ey[i] = rng.standard_normal((steps + 2, d)) @ Fy.T

    K = cl.K
    Yr = sel.returns
    M3 = Yr @ conditional_sigma(ss, cl.kal.omega) @ Yr.T
    drift = Yr @ ss.C @ (ss.A + ss.B @ K)  # E[Y y_{t+1} | F_t] = drift @ x_hat_t
    Aa, Ba = cl.A_aug, cl.B_aug

    Z = np.zeros((P, 2 * n))
    Z[:, n:] = ey[:, 0] @ cl.L.T
    sum_mean = np.zeros(P)
    sum_var = np.zeros(P)
    sum_real = np.zeros(P)
    for t in range(steps + 1):
        x, xh = Z[:, :n], Z[:, n:]
        y = x @ ss.C.T + ey[:, t]
        w = np.hstack([y @ sel.pi_q.T, xh @ K.T])
        Znext = Z @ Aa.T + np.hstack([ex[:, t], ey[:, t + 1]]) @ Ba.T
        if t >= st.burn_in and t < steps:
            y_next = Znext[:, :n] @ ss.C.T + ey[:, t + 1]
            sum_mean += np.einsum("pi,pi->p", w, xh @ drift.T)
            sum_var += np.einsum("pi,ij,pj->p", w, M3, w)
            sum_real += np.einsum("pi,pi->p", w, y_next @ Yr.T)
        Z = Znext
    mean_i = sum_mean / st.T
    var_i = sum_var / st.T
    real_i = sum_real / st.T

    def stats(m, v):
        pnl = m.mean(axis=-1)
        risk = np.sqrt(np.clip(v.mean(axis=-1), 0.0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            sh = np.where(risk > ZERO_RISK_TOL, SQRT_YEAR * pnl / np.where(risk > 0, risk, 1.0), np.nan)
        return pnl, risk, sh

    pnl, risk, sharpe = (float(a) for a in stats(mean_i, var_i))
    zero = risk <= ZERO_RISK_TOL
    if P > 1:
        brng = np.random.default_rng(np.random.SeedSequence(st.seed, spawn_key=(1,)))
        idx = brng.integers(0, P, size=(st.n_boot, P))
        bp, br, bs = stats(mean_i[idx], var_i[idx])
        pnl_se, risk_se = float(bp.std(ddof=1)), float(br.std(ddof=1))
        sharpe_se = float(np.nanstd(bs, ddof=1)) if not zero else float("nan")
        real_se = float(real_i[idx].mean(axis=1).std(ddof=1))
    else:
        pnl_se = risk_se = sharpe_se = real_se = float("nan")
    return PerformanceMetrics(
        avg_pnl=pnl,
        avg_risk=risk,
        sharpe_yearly=float("nan") if zero else sharpe,
        lam=float(lam),
        zero_risk=zero,
        pnl_se=pnl_se,
        risk_se=risk_se,
        sharpe_se=sharpe_se,
        realized_pnl=float(real_i.mean()),
        realized_pnl_se=real_se,
    )


@dataclass(frozen=True)
class RoundTripResult:
    trajectory: Trajectory
    total_pnl: float
    identity: tuple[float, float]
    hysteresis: dict[str, tuple[np.ndarray, np.ndarray]] = field(repr=False)
    area: float = 0.0


def buy_hold_sell_schedule(size: float = 0.01, n_buy: int = 10, n_hold: int = 10, n_sell: int = 10) -> np.ndarray:
    """Buy at a constant rate, hold, then sell back to flat."""
    if n_buy * size == 0 or n_sell == 0:
        return np.zeros(n_buy + n_hold + n_sell)
    sell = -size * n_buy / n_sell
    return np.concatenate([np.full(n_buy, size), np.zeros(n_hold), np.full(n_sell, sell)])


def hysteresis_area(positions, exec_prices) -> float:
    """Signed shoelace area of the position / execution-price loop.

    Trade t moves the position from positions[t] to positions[t+1] at price
    exec_prices[t]; the path is drawn as a staircase. Counter-clockwise loops
    count positively, so the area equals the round-trip PnL.
    """
    Q = np.asarray(positions, dtype=float).ravel()
    pb = np.asarray(exec_prices, dtype=float).ravel()
    xs = np.repeat(Q, 2)[1:-1]
    ys = np.repeat(pb, 2)
    return float(0.5 * np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys))


def round_trip(ss: LinearStateSpace, sel: OutputSelectors, trades, noise=None) -> RoundTripResult:
    """Open-loop round trip: prices, positions, stepwise and cumulative PnL.

    Decision prices start at 0 and accumulate decision returns; the execution
    price of trade t is p_{t+1} - r_exe_{t+1}.
    """
    q = np.asarray(trades, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if q.shape[1] != 1 or sel.n_assets != 1:
        raise ValueError("round_trip supports a single asset")
    Qpos = np.concatenate([[0.0], np.cumsum(q[:, 0])])
    if abs(Qpos[-1]) > 1e-12 * max(1.0, np.abs(q).max(initial=0.0)):
        raise ValueError(f"not a round trip: final position {Qpos[-1]:.3e}")
    traj = simulate(ss, q, noise)
    Y = traj.block("y")
    r_dec = (Y @ sel.pi_dec.T)[:, 0]
    r_exe = (Y @ sel.pi_exe.T)[:, 0]
    p = np.concatenate([[0.0], np.cumsum(r_dec[1:])])
    pbar = p[1:] - r_exe[1:]
    steps = Qpos[:-1] * r_dec[1:] + q[:, 0] * r_exe[1:]
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    lhs, rhs = round_trip_identity_check(q, p, pbar)
    nan = np.array([np.nan])
    out = Trajectory(
        np.arange(len(p)),
        {
            "position": Qpos,
            "trade": np.concatenate([q[:, 0], nan]),
            "decision_price": p,
            "execution_price": np.concatenate([nan, pbar]),
            "pnl": np.concatenate([steps, nan]),
            "cum_pnl": cum,
        },
        meta="open-loop round trip",
    )
    hyst = {"decision": (Qpos, p), "execution": (Qpos, pbar)}
    return RoundTripResult(out, float(cum[-1]), (lhs, rhs), hyst, hysteresis_area(Qpos, pbar))


def closed_loop_impulse(
    cl: ClosedLoopSystem, sel: OutputSelectors, channel: str, horizon: int
) -> Trajectory:
    """Noiseless closed-loop response to a unit shock on one noise channel at step 1."""
    chans = cl.noise_channels
    if channel not in chans:
        raise KeyError(f"unknown noise channel {channel!r}; expected one of {sorted(chans)}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if sel.n_assets != 1:
        raise ValueError("closed_loop_impulse reports a single asset")
    ss = cl.ss
    n = ss.n
    e = chans[channel]
    Z = np.zeros((horizon + 1, 2 * n))
    Z[1] = cl.B_aug @ e
    for t in range(1, horizon):
        Z[t + 1] = cl.A_aug @ Z[t]
    Y = Z[:, :n] @ ss.C.T
    Y[1] += e[n:]
    q = Z[:, n:] @ cl.K.T
    Qpos = (Y @ sel.pi_q.T)[:, 0]
    r_dec = (Y @ sel.pi_dec.T)[:, 0]
    r_exe = (Y @ sel.pi_exe.T)[:, 0]
    p = np.cumsum(r_dec)
    pbar = p - r_exe
    steps = Qpos[:-1] * r_dec[1:] + q[:-1, 0] * r_exe[1:]
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    return Trajectory(
        np.arange(horizon + 1),
        {
            "position": Qpos,
            "trade": q[:, 0],
            "decision_price": p,
            "execution_price": pbar,
            "cum_pnl": cum,
        },
        meta=f"closed-loop impulse on {channel}",
    )


@dataclass(frozen=True)
class CapacityPoint:
    lam: float
    metrics: PerformanceMetrics | None
    mc_metrics: PerformanceMetrics | None = None
    status: str = "ok"


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


def capacity_curve(
    params: SeparableModelParams,
    lambdas,
    mc: MonteCarloSettings | None = None,
    cfg: SolverConfig | None = None,
) -> list[CapacityPoint]:
    """Analytic (and optionally Monte Carlo) metrics along a risk-aversion grid.

    Solver failures are recorded in the point's status instead of aborting.
    """
    ss, sel = build_separable_model(params)
    return capacity_curve_for(ss, sel, lambdas, mc, cfg)


def capacity_curve_for(
    ss: LinearStateSpace,
    sel: OutputSelectors,
    lambdas,
    mc: MonteCarloSettings | None = None,
    cfg: SolverConfig | None = None,
) -> list[CapacityPoint]:
    lams = [float(x) for x in lambdas]
    if any(not l > 0 for l in lams):
        raise ValueError("all risk aversions must be positive")
    if lams != sorted(lams):
        raise ValueError("risk-aversion grid must be sorted")
    kal = solve_kalman(ss, cfg)
    out = []
    for lam in lams:
        try:
            pipe = solve_pipeline(ss, sel, lam, cfg, kal=kal)
            m = analytic_performance(pipe.cl, sel, lam)
            mcm = monte_carlo_metrics(pipe.cl, sel, lam, mc) if mc is not None else None
            out.append(CapacityPoint(lam, m, mcm))
        except LQGError as exc:
            out.append(CapacityPoint(lam, None, None, type(exc).__name__))
    return out


def lambda_impulse_study(
    params: SeparableModelParams,
    lambdas,
    horizon: int = 200,
    channel: str = "eps_p",
    permanent_fraction: float | None = 0.0,
    cfg: SolverConfig | None = None,
) -> list[Trajectory]:
    """Closed-loop impulse responses across risk aversions.

    By default permanent impact is switched off; pass ``permanent_fraction=None``
    to keep the parameters as given.
    """
    if permanent_fraction is not None:
        params = params.with_permanent_fraction(permanent_fraction)
    ss, sel = build_separable_model(params)
    kal = solve_kalman(ss, cfg)
    out = []
    for lam in lambdas:
        if not lam > 0:
            raise ValueError("risk aversion must be positive")
        pipe = solve_pipeline(ss, sel, lam, cfg, kal=kal)
        tr = closed_loop_impulse(pipe.cl, sel, channel, horizon)
        out.append(Trajectory(tr.times, tr.channels, meta=f"{tr.meta}, lambda={lam:g}"))
    return out
