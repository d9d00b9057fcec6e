import numpy as np
import pytest

from lqg_portfolio.models import SeparableModelParams, build_separable_model
from lqg_portfolio.sim import solve_pipeline


@pytest.fixture(scope="session")
def params():
    return SeparableModelParams()


@pytest.fixture(scope="session")
def example(params):
    return build_separable_model(params)


@pytest.fixture(scope="session")
def pipe1(example):
    ss, sel = example
    return solve_pipeline(ss, sel, 1.0)


def random_stable(rng, n, radius=0.95):
    A = rng.standard_normal((n, n))
    return A * (radius / max(abs(np.linalg.eigvals(A))))
