import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqg_portfolio.models import (
    SeparableModelParams,
    build_separable_model,
    calibrate_impact,
    calibrate_predictor,
    load_params,
)
from lqg_portfolio.statespace import GaussianNoise, impulse_response, simulate

# exact inverse of the yearly Markowitz Sharpe at target 3, sigma 0.02, omega_p 0.1
BETA_P_SHARPE3 = 0.0018378731669453625


def test_example_layout(example, params):
    ss, sel = example
    assert np.allclose(np.diag(ss.A), [1, 0, 0, 0.9, 0.8])
    assert np.allclose(ss.B[:, 0], [1, 0.06, -0.03, 0, params.omega_i * params.beta_i])
    nz = {tuple(ix) for ix in np.argwhere(ss.sigma_x != 0)}
    assert nz == {(1, 1), (1, 2), (2, 1), (2, 2), (3, 3)}
    assert np.all(ss.sigma_y == 0)
    assert ss.state_labels == ("Q", "x_dec", "x_exe", "x_p", "x_i")
    assert ss.output_labels == ("Q", "r_dec", "r_exe", "x_p")
    assert np.array_equal(sel.pi_q, [[1, 0, 0, 0]])
    assert np.array_equal(sel.pi_dec, [[0, 1, 0, 0]])
    assert np.array_equal(sel.pi_exe, [[0, 0, 1, 0]])


def test_eta_one_kills_execution_impact():
    ss, _ = build_separable_model(SeparableModelParams(eta=1.0))
    assert ss.B[2, 0] == 0.0


def test_invalid_params():
    for kw in ({"omega_p": 1.5}, {"omega_i": 0.0}, {"sigma": -1.0}, {"eta": 1.2}, {"beta_i": -0.1}):
        with pytest.raises(ValueError, match=next(iter(kw)).split("_")[0]):
            build_separable_model(SeparableModelParams(**kw))


def test_calibrate_predictor():
    b = calibrate_predictor(3, 0.02, 0.1)
    assert b == pytest.approx(BETA_P_SHARPE3, abs=1e-15)
    assert abs(b - 1.838e-3) < 1e-5
    assert abs(1.8e-3 - b) / b < 0.03
    assert calibrate_predictor(0, 0.02, 0.1) == 0
    assert calibrate_predictor(3, 0.04, 0.1) == pytest.approx(2 * b)


def test_calibrate_impact():
    g, b = calibrate_impact(3, 0.02, 1, 0.2)
    assert g == pytest.approx(0.06) and b == pytest.approx(-0.048)
    assert calibrate_impact(3, 0.02, 1, 1.0)[1] == 0.0
    g, b = calibrate_impact(3, 0.02, 1, 0.0)
    assert b == -g
    with pytest.raises(ValueError):
        calibrate_impact(3, 0.02, 1, 1.5)


def test_defaults_follow_calibration(params):
    g, b = calibrate_impact(params.y_ratio, params.sigma, params.v_daily, 0.2)
    assert params.gamma_i == pytest.approx(g) and params.beta_i == pytest.approx(b)
    assert params.permanent_fraction == pytest.approx(0.2)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.9), st.floats(1e-3, 0.2), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_impact_impulse_identity(omega_i, gamma, frac, eta):
    p = SeparableModelParams(omega_i=omega_i, gamma_i=gamma, eta=eta).with_permanent_fraction(frac)
    ss, _ = build_separable_model(p)
    H = int(math.ceil(10 / omega_i))
    cum = impulse_response(ss, "q", H)["cum:r_dec"][-1]
    # remaining geometric tail after H steps
    tail = p.beta_i * (1 - omega_i) ** (H - 1)
    assert cum + tail == pytest.approx(p.gamma_i + p.beta_i, abs=1e-10)


def test_alpha_stationary_variance(example, params):
    ss, _ = example
    reps = []
    for s in range(20):
        tr = simulate(ss, np.zeros(20_000), GaussianNoise(np.random.SeedSequence(9, spawn_key=(s,))))
        reps.append(np.var(tr["x:x_p"][500:]))
    target = params.beta_p**2 / (1 - (1 - params.omega_p) ** 2)
    se = np.std(reps, ddof=1) / np.sqrt(len(reps))
    assert abs(np.mean(reps) - target) < 5 * se


def test_execution_return_relation(example, params):
    ss, _ = example
    rng = np.random.default_rng(0)
    tr = simulate(ss, rng.standard_normal(300) * 0.01, GaussianNoise(1))
    # impact part of the next decision return: relaxing impact plus the fresh trade
    r_impact = tr["x:x_i"][:-1] + params.gamma_i * tr["u:q"][:-1]
    lhs = tr["y:r_exe"][1:]
    rhs = params.eta * tr["y:r_dec"][1:] - r_impact
    assert np.max(np.abs(lhs - rhs)) <= 1e-15


def test_load_params_rejects_unknown(tmp_path):
    good = tmp_path / "p.json"
    good.write_text(json.dumps({"omega_p": 0.2}))
    assert load_params(good).omega_p == 0.2
    bad = tmp_path / "q.json"
    bad.write_text(json.dumps({"omega_P": 0.2}))
    with pytest.raises(ValueError, match="omega_P"):
        load_params(bad)
