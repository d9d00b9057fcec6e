"""LQG control toolkit for dynamic portfolio allocation under price impact."""

from .errors import *  # noqa: F401,F403
from .lqg import (
    ClosedLoopSystem,
    KalmanFilterState,
    KalmanSolution,
    build_closed_loop,
    kalman_step,
    solve_kalman,
    solve_lqr,
)
from .models import (
    SeparableModelParams,
    build_separable_model,
    calibrate_impact,
    calibrate_predictor,
)
from .portfolio import (
    ArbitrageReport,
    CostMatrices,
    OutputSelectors,
    PerformanceMetrics,
    Verdict,
    analytic_performance,
    build_cost_matrices,
    check_no_arbitrage,
    pnl_step,
    round_trip_identity_check,
)
from .solvers import (
    DareSolution,
    SolverConfig,
    is_detectable,
    is_stabilizable,
    solve_dare,
    solve_lyapunov,
    spectral_radius,
)
from .statespace import (
    GaussianNoise,
    LinearStateSpace,
    ReplayNoise,
    Trajectory,
    impulse_response,
    simulate,
    validate,
)

__version__ = "0.1.0"
