"""Deterministic clock functions of the linear-quadratic game.

Everything downstream is expressed through the Riccati solution ``eta`` and
three derived curves on a uniform time grid:

    w_t = exp(int_t^T (eta_s - kappa) ds)
    k_t = int_0^t w_s^-2 ds,      r_t = int_t^T w_s^-2 ds = k_T - k_t

plus the constant ``r_delta = r`` evaluated at the kink time ``delta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline


@dataclass(frozen=True)
class ModelParams:
    """Scalar data of the game.

    ``sigma0`` is the common-noise intensity; most of the package passes the
    noise level explicitly, so this field only matters for config round trips.
    """

    kappa: float = 0.0
    sigma: float = 1.0
    sigma0: float = 0.0
    horizon: float = 1.0
    delta: float = 0.5
    xi: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "sigma", "sigma0", "horizon", "delta", "xi"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if not 0.0 < self.delta < self.horizon:
            raise ValueError(
                f"delta must lie in (0, horizon); got delta={self.delta}, horizon={self.horizon}"
            )
        if self.sigma < 0 or self.sigma0 < 0:
            raise ValueError("volatilities must be non-negative")

    @classmethod
    def canonical(cls) -> "ModelParams":
        return cls(kappa=0.0, sigma=1.0, sigma0=0.0, horizon=1.0, delta=0.5)


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray
    step: float
    delta_index: int

    @property
    def n_steps(self) -> int:
        return len(self.nodes) - 1

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    def index_of(self, t: float) -> int:
        """Index of the node nearest to ``t``."""
        return int(round(t / self.step))


def make_grid(horizon: float, dt: float, delta: float) -> TimeGrid:
    """Uniform grid on [0, horizon] whose step divides ``horizon`` and with
    ``delta`` snapped to the nearest node."""
    if dt <= 0 or dt >= horizon:
        raise ValueError("dt must lie in (0, horizon)")
    n = max(2, int(round(horizon / dt)))
    step = horizon / n
    nodes = np.arange(n + 1, dtype=float) * step
    nodes[-1] = horizon
    j = int(round(delta / step))
    if not 0 < j < n:
        raise ValueError("delta does not fall strictly inside the grid")
    nodes.setflags(write=False)
    return TimeGrid(nodes=nodes, step=step, delta_index=j)


def _riccati_rhs(eta, kappa):
    return eta * eta - 2.0 * kappa * eta - 1.0


def solve_riccati(params: ModelParams, grid: TimeGrid) -> np.ndarray:
    """Backward RK4 for d(eta)/dt = eta^2 - 2 kappa eta - 1 with eta_T = 1."""
    n = grid.n_steps
    h = -grid.step
    kappa = params.kappa
    eta = np.empty(n + 1)
    eta[n] = 1.0
    y = 1.0
    for i in range(n, 0, -1):
        k1 = _riccati_rhs(y, kappa)
        k2 = _riccati_rhs(y + 0.5 * h * k1, kappa)
        k3 = _riccati_rhs(y + 0.5 * h * k2, kappa)
        k4 = _riccati_rhs(y + h * k3, kappa)
        y = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not math.isfinite(y):
            raise FloatingPointError(
                f"Riccati solution overflowed at t={grid.nodes[i - 1]:.6g} (kappa={kappa})"
            )
        eta[i - 1] = y
    return eta


def riccati_residual(eta: np.ndarray, grid: TimeGrid, kappa: float) -> np.ndarray:
    """|d(eta)/dt - rhs| at nodes 2..n-2, derivative by the five-point stencil."""
    h = grid.step
    d = (eta[:-4] - 8.0 * eta[1:-3] + 8.0 * eta[3:-1] - eta[4:]) / (12.0 * h)
    return np.abs(d - _riccati_rhs(eta[2:-2], kappa))


@dataclass(frozen=True)
class CoefficientTable:
    params: ModelParams
    grid: TimeGrid
    eta: np.ndarray
    w: np.ndarray
    r: np.ndarray
    k: np.ndarray
    r_delta: float
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    @property
    def delta(self) -> float:
        """Kink time after snapping to the grid."""
        return float(self.grid.nodes[self.grid.delta_index])

    @property
    def k_T(self) -> float:
        return float(self.k[-1])

    @property
    def k_delta(self) -> float:
        return float(self.k[self.grid.delta_index])

    @property
    def inv_w2(self) -> np.ndarray:
        return self.w ** -2

    # Off-grid evaluation: cubic Hermite interpolation using the exact
    # derivatives of each curve, O(dt^4) accurate.
    def _spline(self, name):
        sp = self._splines.get(name)
        if sp is None:
            t = self.grid.nodes
            kappa = self.params.kappa
            if name == "eta":
                sp = CubicHermiteSpline(t, self.eta, _riccati_rhs(self.eta, kappa))
            elif name == "logw":
                sp = CubicHermiteSpline(t, np.log(self.w), kappa - self.eta)
            elif name == "k":
                sp = CubicHermiteSpline(t, self.k, self.w ** -2)
            else:
                raise KeyError(name)
            self._splines[name] = sp
        return sp

    def eta_at(self, t):
        return self._spline("eta")(t)

    def w_at(self, t):
        return np.exp(self._spline("logw")(t))

    def k_at(self, t):
        return self._spline("k")(t)

    def r_at(self, t):
        return self.k_T - self._spline("k")(t)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "eta", "w", "r", "k"])
            for row in zip(self.grid.nodes, self.eta, self.w, self.r, self.k):
                wr.writerow([repr(float(v)) for v in row])


def build_coefficients(
    params: ModelParams, grid: TimeGrid, eta: np.ndarray | None = None
) -> CoefficientTable:
    if eta is None:
        eta = solve_riccati(params, grid)
    eta = np.asarray(eta, dtype=float)
    if eta.shape != grid.nodes.shape:
        raise ValueError("eta must be sampled on the grid")
    h = grid.step

    # int_0^t (eta - kappa); w_t = exp(total - partial), exactly 1 at T.
    partial = cumulative_simpson(eta - params.kappa, dx=h, initial=0.0)
    log_w = partial[-1] - partial
    log_w[-1] = 0.0
    w = np.exp(log_w)

    k = cumulative_simpson(np.exp(-2.0 * log_w), dx=h, initial=0.0)
    r = k[-1] - k
    r[-1] = 0.0
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(k))):
        raise FloatingPointError("non-finite clock functions")
    if np.any(np.diff(k) <= 0):
        raise FloatingPointError("k is not strictly increasing")

    r_delta = float(r[grid.delta_index])
    for arr in (eta, w, r, k):
        arr.setflags(write=False)
    return CoefficientTable(params=params, grid=grid, eta=eta, w=w, r=r, k=k, r_delta=r_delta)


def canonical_table(dt: float = 1e-3) -> CoefficientTable:
    """kappa=0, sigma=1, T=1, delta=0.5 on a grid of step ``dt``."""
    params = ModelParams.canonical()
    grid = make_grid(params.horizon, dt, params.delta)
    return build_coefficients(params, grid)


def table_for(params: ModelParams, dt: float) -> CoefficientTable:
    grid = make_grid(params.horizon, dt, params.delta)
    return build_coefficients(params, grid)
