"""Linear state-space container, validation, simulation and impulse responses.

The recursion is

    x_{t+1} = A x_t + B q_t + eps^x_{t+1},   eps^x ~ N(0, sigma_x)
    y_t     = C x_t + eps^y_t,               eps^y ~ N(0, sigma_y)

so a control applied at step t is first visible in y_{t+1}.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CovarianceError

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10


def _frozen(a, ndim=2) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1 and ndim == 2:
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


def psd_sqrt(S: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Square-root factor F with F @ F.T == S, from a symmetric eigendecomposition.

    Eigenvalues in [-tol, 0] are clipped to zero; anything more negative is
    rejected. Works for rank-deficient covariances where Cholesky fails.
    """
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return np.zeros_like(S)
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(S))):
        raise CovarianceError("covariance is not symmetric")
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() < -tol:
        raise CovarianceError(f"covariance has negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return U * np.sqrt(w)


def full_rank_factor(S: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Factor G (n x r, r = numerical rank) with G @ G.T == S."""
    F = psd_sqrt(S)
    if F.size == 0:
        return F
    norms = np.linalg.norm(F, axis=0)
    keep = norms > rel_tol * max(norms.max(), 1e-300)
    return F[:, keep]


@dataclass(frozen=True)
class LinearStateSpace:
    """Matrices (A, B, C, sigma_x, sigma_y) plus channel labels.

    ``noise_map`` optionally names the independent standard-normal shocks
    driving the state: sigma_x == noise_map @ noise_map.T. When omitted, each
    coordinate of eps^x is its own channel (noise_map = I).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    state_labels: tuple[str, ...] = ()
    input_labels: tuple[str, ...] = ()
    output_labels: tuple[str, ...] = ()
    noise_map: np.ndarray | None = None
    noise_labels: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("A", "B", "C", "sigma_x", "sigma_y"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n, p, d = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        if not self.state_labels:
            object.__setattr__(self, "state_labels", tuple(f"x{i}" for i in range(n)))
        if not self.input_labels:
            object.__setattr__(self, "input_labels", tuple(f"u{i}" for i in range(p)))
        if not self.output_labels:
            object.__setattr__(self, "output_labels", tuple(f"y{i}" for i in range(d)))
        for name in ("state_labels", "input_labels", "output_labels", "noise_labels"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.noise_map is None:
            object.__setattr__(self, "noise_map", _frozen(np.eye(n)))
            if not self.noise_labels:
                object.__setattr__(
                    self, "noise_labels", tuple(f"eps_{s}" for s in self.state_labels)
                )
        else:
            object.__setattr__(self, "noise_map", _frozen(self.noise_map))
            if not self.noise_labels:
                k = self.noise_map.shape[1]
                object.__setattr__(self, "noise_labels", tuple(f"eps{j}" for j in range(k)))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.C.shape[0]

    def replace(self, **changes) -> "LinearStateSpace":
        from dataclasses import replace

        return replace(self, **changes)


def _check_psd(name: str, S: np.ndarray, out: list[str]) -> None:
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        return
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if S.size and np.max(np.abs(S - S.T)) > SYMMETRY_TOL * scale:
        out.append(f"{name}: not symmetric (max asymmetry {np.max(np.abs(S - S.T)):.3e})")
        return
    if S.size:
        w = np.linalg.eigvalsh(0.5 * (S + S.T))
        if w.min() < -PSD_TOL:
            out.append(f"{name}: not positive semi-definite (min eigenvalue {w.min():.3e})")


def validate(ss: LinearStateSpace) -> list[str]:
    """Return a list of invariant violations; empty when the model is well formed."""
    out: list[str] = []
    A, B, C = ss.A, ss.B, ss.C
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        out.append(f"A: must be square, got shape {A.shape}")
        return out
    n = A.shape[0]
    if B.shape[0] != n:
        out.append(f"B: expected {n} rows to match A, got {B.shape[0]}")
    if C.shape[1] != n:
        out.append(f"C: expected {n} columns to match A, got {C.shape[1]}")
    d = C.shape[0]
    if ss.sigma_x.shape != (n, n):
        out.append(f"sigma_x: expected shape {(n, n)}, got {ss.sigma_x.shape}")
    if ss.sigma_y.shape != (d, d):
        out.append(f"sigma_y: expected shape {(d, d)}, got {ss.sigma_y.shape}")
    _check_psd("sigma_x", ss.sigma_x, out)
    _check_psd("sigma_y", ss.sigma_y, out)
    for name, labels, size in (
        ("state_labels", ss.state_labels, n),
        ("input_labels", ss.input_labels, B.shape[1]),
        ("output_labels", ss.output_labels, d),
    ):
        if len(labels) != size:
            out.append(f"{name}: expected {size} labels, got {len(labels)}")
        if len(set(labels)) != len(labels):
            out.append(f"{name}: labels are not unique")
    G = ss.noise_map
    if G.shape[0] != n:
        out.append(f"noise_map: expected {n} rows, got {G.shape[0]}")
    elif len(ss.noise_labels) != G.shape[1]:
        out.append(f"noise_labels: expected {G.shape[1]} labels, got {len(ss.noise_labels)}")
    elif ss.sigma_x.shape == (n, n) and not np.array_equal(G, np.eye(n)):
        gap = np.max(np.abs(G @ G.T - ss.sigma_x)) if n else 0.0
        if gap > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(ss.sigma_x)))):
            out.append(f"noise_map: noise_map @ noise_map.T differs from sigma_x by {gap:.3e}")
    return out


@dataclass(frozen=True)
class Trajectory:
    """Named, equal-length series indexed by integer time steps."""

    times: np.ndarray
    channels: Mapping[str, np.ndarray]
    meta: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=int)
        chans = {}
        for k, v in self.channels.items():
            arr = np.asarray(v, dtype=float)
            if arr.shape != times.shape:
                raise ValueError(f"channel {k!r} has length {arr.shape}, expected {times.shape}")
            chans[k] = arr
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "channels", chans)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def __len__(self) -> int:
        return len(self.times)

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    def block(self, prefix: str) -> np.ndarray:
        """Stack every channel named ``prefix:<label>`` into a (T, k) array."""
        cols = [v for k, v in self.channels.items() if k.startswith(prefix + ":")]
        return np.column_stack(cols) if cols else np.zeros((len(self.times), 0))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write(",".join(["t", *self.channels]) + "\n")
        cols = list(self.channels.values())
        for i, t in enumerate(self.times):
            buf.write(",".join([str(int(t)), *(f"{c[i]:.16e}" for c in cols)]) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


class GaussianNoise:
    """Seeded Gaussian draws for (eps^x, eps^y) using the model covariances."""

    def __init__(self, seed: int | np.random.SeedSequence):
        self.seed = seed

    def draw(self, ss: LinearStateSpace, T: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        Fx, Fy = psd_sqrt(ss.sigma_x), psd_sqrt(ss.sigma_y)
        zx = rng.standard_normal((T, ss.n))
        zy = rng.standard_normal((T + 1, ss.d))
        return zx @ Fx.T, zy @ Fy.T


@dataclass(frozen=True)
class ReplayNoise:
    """Explicit noise sequences: eps_x[t] feeds x_{t+1}, eps_y[t] feeds y_t."""

    eps_x: np.ndarray
    eps_y: np.ndarray

    def draw(self, ss: LinearStateSpace, T: int) -> tuple[np.ndarray, np.ndarray]:
        ex, ey = np.asarray(self.eps_x, float), np.asarray(self.eps_y, float)
        if ex.shape != (T, ss.n) or ey.shape != (T + 1, ss.d):
            raise ValueError(
                f"replay noise shapes {ex.shape}, {ey.shape} do not match "
                f"{(T, ss.n)}, {(T + 1, ss.d)}"
            )
        return ex, ey

    @classmethod
    def zeros(cls, ss: LinearStateSpace, T: int) -> "ReplayNoise":
        return cls(np.zeros((T, ss.n)), np.zeros((T + 1, ss.d)))


def simulate(
    ss: LinearStateSpace,
    controls: Sequence | np.ndarray,
    noise: GaussianNoise | ReplayNoise | None = None,
    x0: np.ndarray | None = None,
) -> Trajectory:
    """Run the state-space forward for ``len(controls)`` steps.

    Returns states x_0..x_T, observations y_0..y_T and the controls (the
    control column is NaN at t = T, where no trade is taken).
    """
    U = np.asarray(controls, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, ss.p) if ss.p > 1 else U[:, None]
    T = U.shape[0]
    if U.shape[1] != ss.p:
        raise ValueError(f"controls must have {ss.p} columns, got {U.shape[1]}")
    if noise is None:
        noise = ReplayNoise.zeros(ss, T)
    eps_x, eps_y = noise.draw(ss, T)
    X = np.zeros((T + 1, ss.n))
    X[0] = np.zeros(ss.n) if x0 is None else np.asarray(x0, dtype=float)
    for t in range(T):
        X[t + 1] = ss.A @ X[t] + ss.B @ U[t] + eps_x[t]
    Y = X @ ss.C.T + eps_y
    Upad = np.vstack([U, np.full((1, ss.p), np.nan)])
    chans = {}
    chans.update({f"x:{s}": X[:, i] for i, s in enumerate(ss.state_labels)})
    chans.update({f"y:{s}": Y[:, i] for i, s in enumerate(ss.output_labels)})
    chans.update({f"u:{s}": Upad[:, i] for i, s in enumerate(ss.input_labels)})
    return Trajectory(np.arange(T + 1), chans, meta="open-loop simulation")


def impulse_response(ss: LinearStateSpace, input_channel: str, horizon: int) -> Trajectory:
    """Noiseless output response y_1..y_horizon to a unit impulse at step 0.

    ``input_channel`` is a control label (column of B) or a noise label
    (column of the noise map). Cumulative sums are reported as ``cum:<label>``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if input_channel in ss.input_labels:
        x = ss.B[:, ss.input_labels.index(input_channel)].copy()
    elif input_channel in ss.noise_labels:
        x = ss.noise_map[:, ss.noise_labels.index(input_channel)].copy()
    else:
        raise KeyError(
            f"unknown channel {input_channel!r}; expected one of "
            f"{ss.input_labels + ss.noise_labels}"
        )
    Y = np.zeros((horizon, ss.d))
    for t in range(horizon):
        Y[t] = ss.C @ x
        x = ss.A @ x
    cum = np.cumsum(Y, axis=0)
    chans = {f"y:{s}": Y[:, i] for i, s in enumerate(ss.output_labels)}
    chans.update({f"cum:{s}": cum[:, i] for i, s in enumerate(ss.output_labels)})
    return Trajectory(np.arange(1, horizon + 1), chans, meta=f"impulse on {input_channel}")
