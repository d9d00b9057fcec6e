"""Separable alpha / decaying-impact single-asset model and its calibration."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .portfolio import OutputSelectors
from .statespace import LinearStateSpace

STATE_LABELS = ("Q", "x_dec", "x_exe", "x_p", "x_i")
INPUT_LABELS = ("q",)
OUTPUT_LABELS = ("Q", "r_dec", "r_exe", "x_p")
NOISE_LABELS = ("eps_r", "eps_p")

ANNUALIZATION = 250


@dataclass(frozen=True)
class SeparableModelParams:
    """Parameters of the separable model; defaults are the reference calibration.

    beta_i is the impact relaxation scale: a unit trade moves the decision
    price by gamma_i immediately and by gamma_i + beta_i in the long run.
    """

    omega_p: float = 0.1
    beta_p: float = 1.8e-3
    sigma: float = 0.02
    omega_i: float = 0.2
    gamma_i: float = 0.06
    beta_i: float = -0.048
    eta: float = 0.5
    y_ratio: float = 3.0
    v_daily: float = 1.0

    def violations(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                out.append(f"{f.name}: must be a finite number, got {v!r}")
        if out:
            return out
        if not 0 < self.omega_p < 1:
            out.append(f"omega_p: must lie in (0, 1), got {self.omega_p}")
        if not 0 < self.omega_i < 1:
            out.append(f"omega_i: must lie in (0, 1), got {self.omega_i}")
        if not self.sigma > 0:
            out.append(f"sigma: must be positive, got {self.sigma}")
        if not 0 <= self.eta <= 1:
            out.append(f"eta: must lie in [0, 1], got {self.eta}")
        if not self.v_daily > 0:
            out.append(f"v_daily: must be positive, got {self.v_daily}")
        if self.gamma_i > 0:
            f = self.permanent_fraction
            if not -1e-12 <= f <= 1 + 1e-12:
                out.append(f"beta_i: permanent fraction (gamma_i + beta_i)/gamma_i = {f:.6g} outside [0, 1]")
        return out

    def validate(self) -> "SeparableModelParams":
        bad = self.violations()
        if bad:
            raise ValueError("; ".join(bad))
        return self

    @property
    def permanent_fraction(self) -> float:
        return (self.gamma_i + self.beta_i) / self.gamma_i if self.gamma_i else float("nan")

    def with_permanent_fraction(self, fraction: float) -> "SeparableModelParams":
        return replace(self, beta_i=-(1.0 - fraction) * self.gamma_i)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SeparableModelParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown model parameter(s): {', '.join(unknown)}")
        return cls(**data).validate()


def load_params(path: str | Path) -> SeparableModelParams:
    """Read parameters from a JSON object whose keys are the field names."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("model parameter file must hold a JSON object")
    return SeparableModelParams.from_dict(data)


def build_separable_model(p: SeparableModelParams) -> tuple[LinearStateSpace, OutputSelectors]:
    """Five-state model with states (Q, x_dec, x_exe, x_p, x_i).

    Outputs are (Q, r_dec, r_exe, x_p); the return and position selectors
    are derived from the output labels.
    """
    p.validate()
    eta, wp, wi = p.eta, p.omega_p, p.omega_i
    A = np.array(
        [
            [1, 0, 0, 0, 0],
            [0, 0, 0, 1, 1],
            [0, 0, 0, eta, eta - 1],
            [0, 0, 0, 1 - wp, 0],
            [0, 0, 0, 0, 1 - wi],
        ],
        dtype=float,
    )
    B = np.array([[1.0], [p.gamma_i], [p.gamma_i * (eta - 1)], [0.0], [wi * p.beta_i]])
    C = np.eye(4, 5)
    # eps_r hits both returns (the execution return sees a fraction eta of it)
    G = np.zeros((5, 2))
    G[1, 0] = p.sigma
    G[2, 0] = eta * p.sigma
    G[3, 1] = p.beta_p
    ss = LinearStateSpace(
        A=A,
        B=B,
        C=C,
        sigma_x=G @ G.T,
        sigma_y=np.zeros((4, 4)),
        state_labels=STATE_LABELS,
        input_labels=INPUT_LABELS,
        output_labels=OUTPUT_LABELS,
        noise_map=G,
        noise_labels=NOISE_LABELS,
    )
    sel = OutputSelectors.from_labels(OUTPUT_LABELS, position="Q", decision="r_dec", execution="r_exe")
    return ss, sel


def calibrate_predictor(target_sharpe_yearly: float, sigma: float, omega_p: float) -> float:
    """Alpha innovation scale giving the requested yearly Markowitz Sharpe."""
    if target_sharpe_yearly < 0 or sigma <= 0 or not 0 < omega_p < 1:
        raise ValueError("need target >= 0, sigma > 0 and omega_p in (0, 1)")
    rho = 1.0 - omega_p
    return target_sharpe_yearly * sigma * math.sqrt(1.0 - rho**2) / (rho * math.sqrt(ANNUALIZATION))


def calibrate_impact(
    y_ratio: float, sigma: float, v_daily: float = 1.0, permanent_fraction: float = 0.2
) -> tuple[float, float]:
    """Return (gamma_i, beta_i) from the Y-ratio and the permanent share of impact."""
    if not 0 <= permanent_fraction <= 1:
        raise ValueError("permanent_fraction must lie in [0, 1]")
    if v_daily <= 0:
        raise ValueError("v_daily must be positive")
    gamma = y_ratio * sigma / v_daily
    return gamma, -(1.0 - permanent_fraction) * gamma
