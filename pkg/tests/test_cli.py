import csv
import json

import numpy as np
import pytest

from lqg_portfolio.cli import ConfigError, main, parse_config, read_matrix_csv

MC_SMALL = {"T": 1000, "n_paths": 4, "seed": 5, "burn_in": 100, "n_boot": 50}


def run(tmp_path, cfg, command, *extra, name="cfg.json", out="out"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg) if isinstance(cfg, dict) else cfg)
    code = main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def read_table(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_check_example(tmp_path, capsys):
    code, out = run(tmp_path, {"model": {}}, "check")
    assert code == 0
    rep = json.loads((out / "check.json").read_text())
    assert rep["ok"] and rep["arbitrage"]["verdict"] == "NoArbitrage"
    assert rep["stabilizable_A_B"] and rep["detectable_C_A"]
    assert "verdict: NoArbitrage" in capsys.readouterr().out


def test_check_negated_impact_fails(tmp_path):
    code, out = run(tmp_path, {"model": {"gamma_i": -0.06, "beta_i": 0.048}}, "check")
    assert code == 3
    rep = json.loads((out / "check.json").read_text())
    assert rep["arbitrage"]["verdict"] == "ArbitrageDetected"


@pytest.mark.parametrize(
    "cfg, field",
    [
        ({"model": {"omega_p": 1.5}}, "model.omega_p"),
        ({"model": {}, "lambda": 0}, "lambda"),
        ({"model": {"omega": 0.1}}, "omega"),
        ({"model": {}, "matrices": {}}, "model/matrices"),
        ({"model": {}, "montecarlo": {"seeds": 1}}, "seeds"),
    ],
)
def test_config_errors_name_field(tmp_path, capsys, cfg, field):
    code, _ = run(tmp_path, cfg, "solve")
    assert code == 2
    assert field in capsys.readouterr().err


def test_bad_json_reports_position(tmp_path, capsys):
    code, _ = run(tmp_path, '{\n  "model": {,}\n}', "check")
    assert code == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["check", "--config", str(tmp_path / "nope.json")]) == 2


def test_solve_example(tmp_path):
    code, out = run(tmp_path, {"model": {}, "lambda": 1.0}, "solve")
    assert code == 0
    s = json.loads((out / "solve.json").read_text())
    assert s["radius_A_BK"] < 1 and s["radius_closed_loop"] < 1 and s["dare_residual"] < 1e-10
    K = read_matrix_csv(out / "K.csv")
    assert K.shape == (1, 5)
    assert (out / "K.csv").read_text().startswith("# shape 1 5\n")
    assert read_matrix_csv(out / "A_aug.csv").shape == (10, 10)
    for f in s["files"]:
        assert (out / f).exists()


def test_solve_refuses_failed_assumptions(tmp_path):
    cfg = {
        "matrices": {
            "A": [[2.0]], "B": [[0.0]], "C": [[1.0]], "sigma_x": [[1.0]], "sigma_y": [[1.0]],
            "output_labels": ["Q"], "selectors": {"position": "Q", "decision": "Q", "execution": "Q"},
        }
    }
    code, _ = run(tmp_path, cfg, "solve")
    assert code == 3


def test_matrices_config_matches_model(tmp_path):
    from lqg_portfolio.models import SeparableModelParams, build_separable_model

    ss, _ = build_separable_model(SeparableModelParams())
    cfg = {
        "matrices": {
            "A": ss.A.tolist(), "B": ss.B.tolist(), "C": ss.C.tolist(),
            "sigma_x": ss.sigma_x.tolist(), "sigma_y": ss.sigma_y.tolist(),
            "output_labels": list(ss.output_labels), "noise_map": ss.noise_map.tolist(),
            "selectors": {"position": "Q", "decision": "r_dec", "execution": "r_exe"},
        }
    }
    code, a = run(tmp_path, cfg, "solve", out="a")
    assert code == 0
    code, b = run(tmp_path, {"model": {}}, "solve", out="b")
    assert code == 0
    assert np.allclose(read_matrix_csv(a / "K.csv"), read_matrix_csv(b / "K.csv"), atol=1e-12)


def test_parse_config_grid_forms():
    rc = parse_config(json.dumps({"model": {}, "lambda_grid": {"min": 0.1, "max": 10, "n": 3}}))
    assert rc.lambda_grid == pytest.approx([0.1, 1.0, 10.0])
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"model": {}, "lambda_grid": [1.0, 0.5]}))
    with pytest.raises(ConfigError, match="popov_grid_size"):
        parse_config(json.dumps({"model": {}, "popov_grid_size": 16}))


def test_roundtrip_buy_hold_sell(tmp_path):
    code, out = run(tmp_path, {"model": {}}, "roundtrip")
    assert code == 0
    s = json.loads((out / "roundtrip.json").read_text())
    assert s["total_pnl"] < 0
    assert abs(s["identity_lhs"] - s["identity_rhs"]) < 1e-12
    rows = read_table(out / "roundtrip.csv")
    assert float(rows[-1]["cum_pnl"]) == pytest.approx(s["total_pnl"], abs=1e-15)


def test_roundtrip_open_position_is_config_error(tmp_path):
    code, _ = run(tmp_path, {"model": {}, "roundtrip": {"trades": [0.1, 0.0]}}, "roundtrip")
    assert code == 2


@pytest.mark.parametrize("mode, channel", [("closed", "eps_p"), ("open", "q")])
def test_impulse(tmp_path, mode, channel):
    cfg = {"model": {}, "impulse": {"mode": mode, "channel": channel, "horizon": 50, "lambdas": [1.0, 10.0]}}
    code, out = run(tmp_path, cfg, "impulse")
    assert code == 0
    rows = read_table(out / "impulse.csv")
    # the closed-loop trace starts at the shock (t = 0), the open-loop one at t = 1
    assert len(rows) == (51 if mode == "closed" else 50)
    if mode == "closed":
        s = json.loads((out / "impulse.json").read_text())
        assert s["total_pnl"]["1"] > 0
        assert "position@10" in rows[0]


def test_impulse_unknown_channel(tmp_path):
    code, _ = run(tmp_path, {"model": {}, "impulse": {"channel": "bogus"}}, "impulse")
    assert code == 2


def test_capacity_file_shape(tmp_path):
    cfg = {"model": {}, "lambda_grid": {"min": 0.01, "max": 1e4, "n": 20}}
    code, out = run(tmp_path, cfg, "capacity")
    assert code == 0
    rows = read_table(out / "capacity.csv")
    assert len(rows) == 20
    assert list(rows[0]) == ["lambda", "risk", "pnl", "sharpe", "mc_risk", "mc_pnl", "mc_sharpe", "solver_status"]
    assert all(r["solver_status"] == "ok" for r in rows)
    risk = np.array([float(r["risk"]) for r in rows])
    sharpe = np.array([float(r["sharpe"]) for r in rows])
    order = np.argsort(risk)
    assert np.all(np.diff(sharpe[order]) <= 1e-6)


def test_capacity_with_mc_columns(tmp_path):
    cfg = {"model": {}, "lambda_grid": [1.0, 10.0], "capacity": {"monte_carlo": True}, "montecarlo": MC_SMALL}
    code, out = run(tmp_path, cfg, "capacity")
    assert code == 0
    rows = read_table(out / "capacity.csv")
    assert all(np.isfinite(float(r["mc_sharpe"])) for r in rows)


def test_montecarlo_seed_override(tmp_path):
    cfg = {"model": {}, "montecarlo": MC_SMALL}
    run(tmp_path, cfg, "montecarlo", out="a")
    run(tmp_path, cfg, "montecarlo", "--seed", "5", out="b")
    run(tmp_path, cfg, "montecarlo", "--seed", "6", out="c")
    a, b, c = (read_table(tmp_path / d / "montecarlo.csv") for d in "abc")
    assert a == b and a != c


COMMAND_CONFIGS = {
    "check": {"model": {}},
    "solve": {"model": {}},
    "impulse": {"model": {}, "impulse": {"horizon": 40}},
    "roundtrip": {"model": {}},
    "capacity": {"model": {}, "lambda_grid": [0.5, 5.0], "capacity": {"monte_carlo": True}, "montecarlo": MC_SMALL},
    "montecarlo": {"model": {}, "montecarlo": dict(MC_SMALL, lambdas=[0.5, 5.0])},
}


@pytest.mark.parametrize("command", sorted(COMMAND_CONFIGS))
def test_commands_are_byte_deterministic(tmp_path, command):
    cfg = COMMAND_CONFIGS[command]
    c1, a = run(tmp_path, cfg, command, out="a")
    c2, b = run(tmp_path, cfg, command, out="b")
    assert c1 == c2 == 0
    assert snapshot(a) == snapshot(b)
