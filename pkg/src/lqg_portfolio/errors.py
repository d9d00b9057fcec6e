"""Exception taxonomy shared by the solvers, the LQG layer and the CLI."""


class LQGError(Exception):
    """Base class for every numerical or structural failure raised here."""


class CovarianceError(LQGError, ValueError):
    """A covariance matrix is not symmetric positive semi-definite."""


class NotStabilizable(LQGError):
    pass


class NotDetectable(LQGError):
    pass


class RNotInvertible(LQGError):
    pass


class NoStabilizingSolution(LQGError):
    """The Riccati equation has no stabilizing solution.

    For the portfolio cost this is the numerical signature of a profitable
    round trip (an arbitrage in the price-impact model).
    """


class MaxIterExceeded(LQGError):
    pass


class UnstableA(LQGError):
    pass


class UnstableClosedLoop(LQGError):
    pass


class ConvergenceError(LQGError):
    pass


class ResidualError(LQGError):
    pass
