"""Command-line entry point: ``lqg-portfolio <verb> --config run.json``.

Exit codes: 0 success, 2 configuration error, 3 assumption or arbitrage
failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .errors import LQGError, NoStabilizingSolution, NotDetectable, NotStabilizable
from .lqg import noise_stabilizable, solve_kalman
from .models import SeparableModelParams, build_separable_model
from .portfolio import OutputSelectors, Verdict, analytic_performance, check_no_arbitrage
from .sim import (
    MonteCarloSettings,
    buy_hold_sell_schedule,
    capacity_curve_for,
    closed_loop_impulse,
    log_grid,
    monte_carlo_metrics,
    round_trip,
    solve_pipeline,
)
from .solvers import SolverConfig, is_detectable, is_stabilizable, spectral_radius
from .statespace import LinearStateSpace, impulse_response, validate

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERICAL = 0, 2, 3, 4

ASSUMPTION_ERRORS = (NotStabilizable, NotDetectable, NoStabilizingSolution)


class ConfigError(ValueError):
    pass


# allowed keys per block; None means free-form (validated by the consumer)
SCHEMA: dict[str, Any] = {
    "model": {f.name for f in fields(SeparableModelParams)},
    "matrices": {
        "A", "B", "C", "sigma_x", "sigma_y", "state_labels", "input_labels",
        "output_labels", "noise_map", "noise_labels", "selectors",
    },
    "lambda": None,
    "lambda_grid": None,
    "popov_grid_size": None,
    "solver": {"tol_residual", "max_iter", "stability_margin"},
    "impulse": {"channel", "horizon", "mode", "lambdas", "permanent_fraction"},
    "roundtrip": {"trades", "size", "n_buy", "n_hold", "n_sell"},
    "montecarlo": {"T", "n_paths", "seed", "burn_in", "n_boot", "lambdas"},
    "capacity": {"monte_carlo"},
    "output_dir": None,
}
GRID_KEYS = {"min", "max", "n"}
SELECTOR_KEYS = {"position", "decision", "execution"}


@dataclass
class RunConfig:
    raw: dict
    ss: LinearStateSpace
    sel: OutputSelectors
    params: SeparableModelParams | None
    lam: float
    lambda_grid: list[float]
    grid_size: int
    solver: SolverConfig
    output_dir: Path
    sha256: str


def _positive(name: str, v, integer: bool = False):
    ok_type = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok_type or not math.isfinite(v) or v <= 0:
        kind = "a positive integer" if integer else "a positive number"
        raise ConfigError(f"{name}: must be {kind}, got {v!r}")
    return v


def _check_keys(block: str, data, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{block}: must be an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{block}: unknown key(s) {', '.join(unknown)}")


def _matrix(name: str, v) -> np.ndarray:
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not a numeric matrix ({exc})") from None
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ConfigError(f"{name}: must be a 2-D list of rows")
    return a


def _system_from_matrices(m: dict) -> tuple[LinearStateSpace, OutputSelectors]:
    _check_keys("matrices", m, SCHEMA["matrices"])
    for k in ("A", "B", "C", "sigma_x", "sigma_y", "selectors"):
        if k not in m:
            raise ConfigError(f"matrices.{k}: required")
    kw = {k: _matrix(f"matrices.{k}", m[k]) for k in ("A", "B", "C", "sigma_x", "sigma_y")}
    if "noise_map" in m:
        kw["noise_map"] = _matrix("matrices.noise_map", m["noise_map"])
    for k in ("state_labels", "input_labels", "output_labels", "noise_labels"):
        if k in m:
            kw[k] = tuple(str(s) for s in m[k])
    try:
        ss = LinearStateSpace(**kw)
    except (ValueError, LQGError) as exc:
        raise ConfigError(f"matrices: {exc}") from None
    bad = validate(ss)
    if bad:
        raise ConfigError("matrices." + "; matrices.".join(bad))
    sm = m["selectors"]
    _check_keys("matrices.selectors", sm, SELECTOR_KEYS)
    try:
        sel = OutputSelectors.from_labels(
            ss.output_labels, sm["position"], sm["decision"], sm["execution"]
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"matrices.selectors: {exc}") from None
    return ss, sel


def _lambda_grid(v) -> list[float]:
    if isinstance(v, dict):
        _check_keys("lambda_grid", v, GRID_KEYS)
        lo = _positive("lambda_grid.min", v.get("min"))
        hi = _positive("lambda_grid.max", v.get("max"))
        n = _positive("lambda_grid.n", v.get("n"), integer=True)
        if hi < lo:
            raise ConfigError("lambda_grid: max must be >= min")
        return [float(x) for x in log_grid(lo, hi, n)]
    if not isinstance(v, list) or not v:
        raise ConfigError("lambda_grid: must be a non-empty list or {min, max, n}")
    vals = [float(_positive(f"lambda_grid[{i}]", x)) for i, x in enumerate(v)]
    if vals != sorted(vals):
        raise ConfigError("lambda_grid: must be sorted ascending")
    return vals


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Validate a JSON run configuration; raises ConfigError naming the field."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("top level: must be a JSON object")
    _check_keys("top level", raw, SCHEMA)
    for block, allowed in SCHEMA.items():
        if isinstance(allowed, set) and block in raw and block != "matrices":
            _check_keys(block, raw[block], allowed)
    if ("model" in raw) == ("matrices" in raw):
        raise ConfigError("model/matrices: exactly one of the two must be present")
    params = None
    if "model" in raw:
        try:
            params = SeparableModelParams(**raw["model"])
        except TypeError as exc:
            raise ConfigError(f"model: {exc}") from None
        bad = params.violations()
        if bad:
            raise ConfigError("model." + "; model.".join(bad))
        ss, sel = build_separable_model(params)
    else:
        ss, sel = _system_from_matrices(raw["matrices"])
    lam = float(_positive("lambda", raw.get("lambda", 1.0)))
    grid = _lambda_grid(raw["lambda_grid"]) if "lambda_grid" in raw else [lam]
    overrides = overrides or {}
    gs = overrides.get("grid_size") or raw.get("popov_grid_size", 1024)
    _positive("popov_grid_size", gs, integer=True)
    if gs < 64:
        raise ConfigError(f"popov_grid_size: must be >= 64, got {gs}")
    try:
        solver = SolverConfig(**raw.get("solver", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from None
    out = overrides.get("out") or raw.get("output_dir", "out")
    sha = hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()
    return RunConfig(raw, ss, sel, params, lam, grid, int(gs), solver, Path(out), sha)


def _mc_settings(rc: RunConfig, seed_override: int | None) -> MonteCarloSettings:
    block = dict(rc.raw.get("montecarlo", {}))
    block.pop("lambdas", None)
    if seed_override is not None:
        block["seed"] = seed_override
    for k in ("T", "n_paths", "burn_in", "n_boot", "seed"):
        if k in block and (not isinstance(block[k], int) or isinstance(block[k], bool)):
            raise ConfigError(f"montecarlo.{k}: must be an integer, got {block[k]!r}")
    try:
        return MonteCarloSettings(**block)
    except ValueError as exc:
        raise ConfigError(f"montecarlo: {exc}") from None


# ---------------------------------------------------------------- output helpers


def _fmt(x: float) -> str:
    return f"{x:.16e}"


def write_matrix_csv(path: Path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [f"# shape {M.shape[0]} {M.shape[1]}"]
    lines += [",".join(_fmt(v) for v in row) for row in M]
    path.write_text("\n".join(lines) + "\n")


def read_matrix_csv(path: Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    r, c = (int(v) for v in lines[0].split()[2:4])
    return np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(r, c)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _sidecar(rc: RunConfig, command: str, **extra) -> dict:
    return {"command": command, "config_sha256": rc.sha256, "config": rc.raw, **extra}


def _table_csv(path: Path, header: list[str], rows: list[list]) -> None:
    def cell(v):
        if isinstance(v, str):
            return v
        if v is None:
            return "nan"
        return _fmt(float(v))

    text = ",".join(header) + "\n" + "".join(",".join(cell(v) for v in r) + "\n" for r in rows)
    path.write_text(text)


# ---------------------------------------------------------------- commands


def _assumptions(rc: RunConfig) -> dict:
    ss = rc.ss
    reduced, strict = noise_stabilizable(ss)
    return {
        "stabilizable_A_B": bool(is_stabilizable(ss.A, ss.B)),
        "stabilizable_A_sigma_x": reduced,
        "stabilizable_A_sigma_x_strict": strict,
        "detectable_C_A": bool(is_detectable(ss.C, ss.A)),
        "spectral_radius_A": spectral_radius(ss.A),
    }


def cmd_check(rc: RunConfig, args) -> int:
    info = _assumptions(rc)
    ok = info["stabilizable_A_B"] and info["stabilizable_A_sigma_x"] and info["detectable_C_A"]
    report = None
    if info["stabilizable_A_B"]:
        report = check_no_arbitrage(rc.ss, rc.sel, rc.lam, rc.solver, rc.grid_size)
        info["arbitrage"] = report.summary()
        ok = ok and report.verdict is Verdict.NO_ARBITRAGE
    for k, v in info.items():
        if k != "arbitrage":
            print(f"{k}: {v}")
    if report is not None:
        for k, v in report.summary().items():
            print(f"{k}: {v}")
    rc.output_dir.mkdir(parents=True, exist_ok=True)
    write_json(rc.output_dir / "check.json", _sidecar(rc, "check", lam=rc.lam, ok=ok, **info))
    return EXIT_OK if ok else EXIT_ASSUMPTION


def cmd_solve(rc: RunConfig, args) -> int:
    if not args.force:
        info = _assumptions(rc)
        if not (info["stabilizable_A_B"] and info["stabilizable_A_sigma_x"] and info["detectable_C_A"]):
            print("assumption check failed (use --force to override):", info, file=sys.stderr)
            return EXIT_ASSUMPTION
    pipe = solve_pipeline(rc.ss, rc.sel, rc.lam, rc.solver)
    out = rc.output_dir
    out.mkdir(parents=True, exist_ok=True)
    mats = {
        "K": pipe.lqr.K,
        "L": pipe.kal.L,
        "P": pipe.lqr.P,
        "omega_tilde": pipe.kal.omega_tilde,
        "omega": pipe.kal.omega,
        "A_aug": pipe.cl.A_aug,
        "B_aug": pipe.cl.B_aug,
        "V": pipe.cl.V,
        "V_hat": pipe.cl.V_hat,
    }
    for name, M in mats.items():
        write_matrix_csv(out / f"{name}.csv", M)
    m = analytic_performance(pipe.cl, rc.sel, rc.lam)
    summary = _sidecar(
        rc,
        "solve",
        lam=rc.lam,
        dare_residual=pipe.lqr.residual,
        dare_iterations=pipe.lqr.iterations,
        radius_A_BK=pipe.lqr.closed_loop_radius,
        radius_closed_loop=pipe.cl.radius,
        kalman_residual=pipe.kal.residual,
        radius_filter=pipe.kal.filter_radius,
        avg_pnl=m.avg_pnl,
        avg_risk=m.avg_risk,
        sharpe_yearly=m.sharpe_yearly,
        files=sorted(f"{k}.csv" for k in mats),
    )
    write_json(out / "solve.json", summary)
    print(f"rho(A+BK) = {pipe.lqr.closed_loop_radius:.6f}, DARE residual = {pipe.lqr.residual:.3e}")
    return EXIT_OK


def cmd_impulse(rc: RunConfig, args) -> int:
    blk = rc.raw.get("impulse", {})
    mode = blk.get("mode", "closed")
    horizon = _positive("impulse.horizon", blk.get("horizon", 200), integer=True)
    out = rc.output_dir
    if mode == "open":
        channel = blk.get("channel", rc.ss.input_labels[0])
        try:
            tr = impulse_response(rc.ss, channel, horizon)
        except KeyError as exc:
            raise ConfigError(f"impulse.channel: {exc.args[0]}") from None
        out.mkdir(parents=True, exist_ok=True)
        tr.to_csv(out / "impulse.csv")
        write_json(out / "impulse.json", _sidecar(rc, "impulse", mode=mode, channel=channel))
        return EXIT_OK
    if mode != "closed":
        raise ConfigError(f"impulse.mode: must be 'open' or 'closed', got {mode!r}")
    channel = blk.get("channel", rc.ss.noise_labels[-1])
    lams = blk.get("lambdas", [rc.lam])
    lams = [float(_positive(f"impulse.lambdas[{i}]", v)) for i, v in enumerate(lams)]
    ss, sel = rc.ss, rc.sel
    pf = blk.get("permanent_fraction", 0.0 if rc.params is not None else None)
    if pf is not None:
        if rc.params is None:
            raise ConfigError("impulse.permanent_fraction: only applies to model configs")
        ss, sel = build_separable_model(rc.params.with_permanent_fraction(float(pf)))
    kal = solve_kalman(ss, rc.solver)
    cols: dict[str, np.ndarray] = {}
    radii = []
    for lam in lams:
        pipe = solve_pipeline(ss, sel, lam, rc.solver, kal=kal)
        if channel not in pipe.cl.noise_channels:
            raise ConfigError(f"impulse.channel: unknown channel {channel!r}")
        tr = closed_loop_impulse(pipe.cl, sel, channel, horizon)
        for k, v in tr.channels.items():
            cols[f"{k}@{lam:g}"] = v
        radii.append(pipe.cl.radius)
        times = tr.times
    out.mkdir(parents=True, exist_ok=True)
    _table_csv(out / "impulse.csv", ["t", *cols], [[str(int(t)), *(c[i] for c in cols.values())] for i, t in enumerate(times)])
    totals = {f"{lam:g}": cols[f"cum_pnl@{lam:g}"][-1] for lam in lams}
    write_json(
        out / "impulse.json",
        _sidecar(rc, "impulse", mode=mode, channel=channel, lambdas=lams, closed_loop_radius=radii,
                 total_pnl=totals, permanent_fraction=pf),
    )
    return EXIT_OK


def cmd_roundtrip(rc: RunConfig, args) -> int:
    blk = rc.raw.get("roundtrip", {})
    if "trades" in blk:
        trades = np.array(blk["trades"], dtype=float)
    else:
        trades = buy_hold_sell_schedule(
            float(blk.get("size", 0.01)), int(blk.get("n_buy", 10)), int(blk.get("n_hold", 10)), int(blk.get("n_sell", 10))
        )
    try:
        res = round_trip(rc.ss, rc.sel, trades)
    except ValueError as exc:
        raise ConfigError(f"roundtrip: {exc}") from None
    out = rc.output_dir
    out.mkdir(parents=True, exist_ok=True)
    res.trajectory.to_csv(out / "roundtrip.csv")
    write_json(
        out / "roundtrip.json",
        _sidecar(rc, "roundtrip", total_pnl=res.total_pnl, identity_lhs=res.identity[0],
                 identity_rhs=res.identity[1], hysteresis_area=res.area),
    )
    print(f"total_pnl = {res.total_pnl:.6e}")
    return EXIT_OK


def cmd_capacity(rc: RunConfig, args) -> int:
    with_mc = bool(rc.raw.get("capacity", {}).get("monte_carlo", False))
    mc = _mc_settings(rc, args.seed) if with_mc else None
    pts = capacity_curve_for(rc.ss, rc.sel, rc.lambda_grid, mc, rc.solver)
    header = ["lambda", "risk", "pnl", "sharpe", "mc_risk", "mc_pnl", "mc_sharpe", "solver_status"]
    rows = []
    for p in pts:
        m, q = p.metrics, p.mc_metrics
        rows.append([
            p.lam,
            m.avg_risk if m else None, m.avg_pnl if m else None, m.sharpe_yearly if m else None,
            q.avg_risk if q else None, q.avg_pnl if q else None, q.sharpe_yearly if q else None,
            p.status,
        ])
    out = rc.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _table_csv(out / "capacity.csv", header, rows)
    write_json(out / "capacity.json", _sidecar(rc, "capacity", lambdas=rc.lambda_grid,
                                               seed=mc.seed if mc else None))
    return EXIT_OK


def cmd_montecarlo(rc: RunConfig, args) -> int:
    mc = _mc_settings(rc, args.seed)
    lams = rc.raw.get("montecarlo", {}).get("lambdas", [rc.lam])
    lams = [float(_positive(f"montecarlo.lambdas[{i}]", v)) for i, v in enumerate(lams)]
    kal = solve_kalman(rc.ss, rc.solver)
    header = ["lambda", "pnl", "pnl_se", "risk", "risk_se", "sharpe", "sharpe_se",
              "realized_pnl", "realized_pnl_se", "analytic_pnl", "analytic_risk", "analytic_sharpe"]
    rows = []
    for lam in lams:
        pipe = solve_pipeline(rc.ss, rc.sel, lam, rc.solver, kal=kal)
        a = analytic_performance(pipe.cl, rc.sel, lam)
        m = monte_carlo_metrics(pipe.cl, rc.sel, lam, mc)
        rows.append([lam, m.avg_pnl, m.pnl_se, m.avg_risk, m.risk_se, m.sharpe_yearly, m.sharpe_se,
                     m.realized_pnl, m.realized_pnl_se, a.avg_pnl, a.avg_risk, a.sharpe_yearly])
    out = rc.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _table_csv(out / "montecarlo.csv", header, rows)
    write_json(out / "montecarlo.json", _sidecar(rc, "montecarlo", seed=mc.seed, T=mc.T,
                                                 n_paths=mc.n_paths, burn_in=mc.burn_in))
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "impulse": cmd_impulse,
    "roundtrip": cmd_roundtrip,
    "capacity": cmd_capacity,
    "montecarlo": cmd_montecarlo,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lqg-portfolio", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    ap.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    ap.add_argument("--force", action="store_true", help="solve even if assumption checks fail")
    ap.add_argument("--grid-size", type=int, help="Popov sweep grid size (overrides config)")
    ap.add_argument("--seed", type=int, help="Monte Carlo seed (overrides config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rc = parse_config(text, {"out": args.out, "grid_size": args.grid_size})
        return COMMANDS[args.command](rc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ASSUMPTION_ERRORS as exc:
        print(f"assumption failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except LQGError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
