"""Mean process under common noise, transition-point statistics and the
zero-noise selection experiment.

The state equation is

    d mu = -w_t^-2 theta(t, mu) dt + sigma0 w_t^-1 dB_t,   mu_0 = xi,

discretised by Euler-Maruyama with the drift frozen at the left node.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from mfg_select import rng
from mfg_select.coefficients import CoefficientTable, TimeGrid
from mfg_select.decoupling import ViscousField

Field = Callable[[float, np.ndarray], np.ndarray]


def euler_maruyama(table: CoefficientTable, field: Field, sigma0: float,
                   normals: np.ndarray, x0: float = 0.0) -> np.ndarray:
    """Advance a batch of paths driven by standard normals of shape
    (paths, steps).  Returns the states at every node, shape (paths, steps+1)."""
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    grid = table.grid
    n = grid.n_steps
    if normals.shape[1] != n:
        raise ValueError(f"expected {n} increments per path, got {normals.shape[1]}")
    dt = grid.step
    inv_w = 1.0 / np.asarray(table.w)
    drift_scale = inv_w * inv_w * dt
    noise_scale = sigma0 * inv_w * math.sqrt(dt)
    out = np.empty((normals.shape[0], n + 1))
    x = np.full(normals.shape[0], float(x0))
    out[:, 0] = x
    for i in range(n):
        theta = np.asarray(field(grid.nodes[i], x), dtype=float)
        x = x - drift_scale[i] * theta + noise_scale[i] * normals[:, i]
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x))[0])
            raise FloatingPointError(f"non-finite state in path {bad} at t={grid.nodes[i + 1]:.6g}")
        out[:, i + 1] = x
    return out


@dataclass(frozen=True)
class SdePath:
    grid: TimeGrid
    values: np.ndarray
    seed: int
    path_id: int = 0


@dataclass(frozen=True)
class PathEnsemble:
    table: CoefficientTable
    sigma0: float
    seed: int
    path_ids: np.ndarray
    values: np.ndarray
    normals: np.ndarray

    @property
    def grid(self) -> TimeGrid:
        return self.table.grid

    def __len__(self) -> int:
        return self.values.shape[0]

    def path(self, j: int) -> SdePath:
        return SdePath(self.grid, self.values[j], self.seed, int(self.path_ids[j]))

    def noise_integral(self) -> np.ndarray:
        """sigma0 * sum w^-1 sqrt(dt) xi at every node, recomputed from the
        stored increments."""
        grid = self.grid
        inc = self.sigma0 * math.sqrt(grid.step) * self.normals / np.asarray(self.table.w[:-1])
        out = np.zeros_like(self.values)
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out


def path_normals(seed: int, path_id: int, n_steps: int) -> np.ndarray:
    return rng.normals(seed, "mfg", path_id, n_steps)


def _default_field(table, sigma0, field):
    if field is not None:
        return field
    return ViscousField(table, sigma0)


def simulate_mu(sigma0: float, table: CoefficientTable, seed: int,
                field: Field | None = None, path_id: int = 0, xi: float = 0.0) -> SdePath:
    field = _default_field(table, sigma0, field)
    z = path_normals(seed, path_id, table.grid.n_steps)
    vals = euler_maruyama(table, field, sigma0, z[None, :], x0=xi)[0]
    return SdePath(table.grid, vals, seed, path_id)


def simulate_ensemble(sigma0: float, table: CoefficientTable, n_paths: int, seed: int,
                      field: Field | None = None, threads: int | None = None,
                      xi: float = 0.0, normals: np.ndarray | None = None) -> PathEnsemble:
    """Simulate ``n_paths`` independent paths.  Output does not depend on the
    number of worker threads: each path owns its stream and the update is
    elementwise across paths."""
    field = _default_field(table, sigma0, field)
    n = table.grid.n_steps
    ids = np.arange(n_paths)
    if normals is None:
        normals = np.stack([path_normals(seed, int(j), n) for j in ids]) if n_paths else np.empty((0, n))
    workers = min(rng.worker_count(threads), max(1, n_paths))
    chunks = np.array_split(ids, workers)

    def run(chunk):
        return euler_maruyama(table, field, sigma0, normals[chunk], x0=xi)

    if workers == 1:
        values = run(ids)
    else:
        with ThreadPoolExecutor(workers) as pool:
            values = np.concatenate(list(pool.map(run, chunks)), axis=0)
    return PathEnsemble(table, sigma0, seed, ids, values, normals)


# ---------------------------------------------------------------- transition

def scale_L(sigma0: float, exponent: float = 1.0 / 9.0) -> float:
    return abs(math.log(sigma0)) ** exponent


@dataclass(frozen=True)
class TransitionPoint:
    epsilon0: float
    t0: float
    L: float

    @property
    def sigma0(self) -> float:
        return self.t0

    @property
    def floor(self) -> float:
        """sigma0^2 L, the starting height of the escape envelope."""
        return self.t0 ** 2 * self.L


def transition_point(sigma0: float, exponent: float = 1.0 / 9.0) -> TransitionPoint:
    if not 0.0 < sigma0 < 1.0:
        raise ValueError("sigma0 must lie in (0, 1)")
    L = scale_L(sigma0, exponent)
    return TransitionPoint(epsilon0=sigma0 ** 2 * L ** 2, t0=sigma0, L=L)


def _first_index(mask: np.ndarray, default: int) -> np.ndarray:
    """First True position along the last axis, or ``default``."""
    mask = np.atleast_2d(mask)
    hit = mask.any(axis=1)
    return np.where(hit, mask.argmax(axis=1), default)


def tau_epsilon_index(values: np.ndarray, epsilon0: float) -> np.ndarray:
    if epsilon0 <= 0:
        raise ValueError("epsilon0 must be positive")
    values = np.atleast_2d(values)
    return _first_index(np.abs(values) > epsilon0, values.shape[1] - 1)


def tau_epsilon(values: np.ndarray, grid: TimeGrid, epsilon0: float):
    """Time of the first node with |value| > epsilon0; T if there is none."""
    idx = tau_epsilon_index(values, epsilon0)
    times = grid.nodes[idx]
    return float(times[0]) if np.ndim(values) == 1 else times


def c_delta(table: CoefficientTable) -> float:
    d = table.delta
    return float(table.k_at(d) - table.k_at(0.5 * d)) / (2.0 * table.k_T)


def tau_gamma_escape(values: np.ndarray, table: CoefficientTable, gamma: float,
                     transition: TransitionPoint, side: int = 1):
    """First time after tau_eps at which side*mu drops below
    sigma0^2 L + (1 - gamma) (k_t - k_tau); T if never."""
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    cd = c_delta(table)
    if not 0.0 < gamma < cd:
        raise ValueError(f"gamma must lie in (0, c_delta) = (0, {cd:.6g})")
    single = np.ndim(values) == 1
    values = np.atleast_2d(values)
    n = values.shape[1] - 1
    start = tau_epsilon_index(values, transition.epsilon0)
    k = np.asarray(table.k)
    cols = np.arange(n + 1)[None, :]
    envelope = transition.floor + (1.0 - gamma) * (k[None, :] - k[start][:, None])
    breach = (side * values < envelope) & (cols >= start[:, None])
    idx = _first_index(breach, n)
    times = table.grid.nodes[idx]
    return float(times[0]) if single else times


def escape_fraction(values: np.ndarray, table: CoefficientTable, gamma: float,
                    transition: TransitionPoint) -> tuple[float, int]:
    """Among paths whose first exit of [-eps0, eps0] is upward, the share
    whose escape envelope is violated strictly before T; mirrored paths
    are folded in by symmetry.  Returns (fraction, number of exits)."""
    values = np.atleast_2d(values)
    idx = tau_epsilon_index(values, transition.epsilon0)
    exited = np.abs(values[np.arange(len(values)), idx]) > transition.epsilon0
    up = exited & (values[np.arange(len(values)), idx] > 0)
    down = exited & ~up
    T = table.horizon
    fails = 0
    if up.any():
        fails += int(np.sum(tau_gamma_escape(values[up], table, gamma, transition, 1) < T))
    if down.any():
        fails += int(np.sum(tau_gamma_escape(values[down], table, gamma, transition, -1) < T))
    total = int(exited.sum())
    return (fails / total if total else 0.0), total


# ----------------------------------------------------------------- selection

@dataclass(frozen=True)
class SelectionReport:
    n_plus: int
    n_minus: int
    n_unclassified: int
    frac_plus: float
    frac_minus: float
    frac_unclassified: float
    se_plus: float
    se_minus: float
    se_unclassified: float
    hitting_time_quantiles: tuple
    tolerance: float

    @property
    def total(self) -> int:
        return self.n_plus + self.n_minus + self.n_unclassified

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def classify(values: np.ndarray, table: CoefficientTable, tolerance: float) -> np.ndarray:
    """+1 for the +k tube, -1 for -k, 0 otherwise; sup distance over [delta, T]."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    values = np.atleast_2d(values)
    j = table.grid.delta_index
    k = np.asarray(table.k)[j:]
    tail = values[:, j:]
    plus = np.max(np.abs(tail - k), axis=1) <= tolerance
    minus = np.max(np.abs(tail + k), axis=1) <= tolerance
    return np.where(plus, 1, np.where(minus, -1, 0))


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n) if n else float("nan")


def report_from_labels(labels: np.ndarray, tolerance: float,
                       hitting_times: np.ndarray | None = None) -> SelectionReport:
    labels = np.asarray(labels)
    m = labels.size
    n_plus = int(np.sum(labels == 1))
    n_minus = int(np.sum(labels == -1))
    n_un = m - n_plus - n_minus
    fp, fm, fu = (n_plus / m, n_minus / m, n_un / m) if m else (0.0, 0.0, 0.0)
    if hitting_times is not None and len(hitting_times):
        quant = tuple(float(q) for q in np.quantile(hitting_times, [0.1, 0.5, 0.9]))
    else:
        quant = ()
    return SelectionReport(n_plus, n_minus, n_un, fp, fm, fu,
                           _binomial_se(fp, m), _binomial_se(fm, m), _binomial_se(fu, m),
                           quant, tolerance)


def selection_stats(ensemble: PathEnsemble | np.ndarray, tolerance: float,
                    table: CoefficientTable | None = None,
                    epsilon0: float | None = None) -> SelectionReport:
    if isinstance(ensemble, PathEnsemble):
        values, table = ensemble.values, ensemble.table
        if epsilon0 is None and ensemble.sigma0 > 0:
            epsilon0 = transition_point(ensemble.sigma0).epsilon0
    else:
        values = np.atleast_2d(ensemble)
        if table is None:
            raise ValueError("a coefficient table is required for raw arrays")
    labels = classify(values, table, tolerance)
    hits = tau_epsilon(values, table.grid, epsilon0) if epsilon0 else None
    return report_from_labels(labels, tolerance, None if hits is None else np.atleast_1d(hits))


def drift_envelope_excess(ensemble: PathEnsemble) -> float:
    """max over paths and nodes of |mu| - (K_n + |noise_n|), K the left-point
    Riemann clock; non-positive whenever |theta| <= 1 along the path."""
    grid = ensemble.grid
    inv_w2 = np.asarray(ensemble.table.w[:-1]) ** -2
    clock = np.concatenate([[0.0], np.cumsum(inv_w2 * grid.step)])
    noise = ensemble.noise_integral()
    return float(np.max(np.abs(ensemble.values) - clock[None, :] - np.abs(noise)))


# ------------------------------------------------------------- hitting bound

@dataclass(frozen=True)
class HittingCheck:
    a: float
    clock: float
    estimate: float
    standard_error: float
    bound: float
    resolution: float

    @property
    def passed(self) -> bool:
        # A bound below Monte Carlo resolution is vacuous but not violated.
        return self.estimate >= self.bound or self.bound < self.resolution


def hitting_bound(a: float, clock: float) -> float:
    """Explicit lower bound exp(-2k - 4a^2/k) / (2 pi k) from the change of
    measure argument (valid for a >= 1)."""
    return math.exp(-2.0 * clock - 4.0 * a * a / clock) / (2.0 * math.pi * clock)


def hitting_probabilities(a_values, clock: float, n_paths: int, seed: int,
                          n_steps: int = 1000, chunk: int = 10000) -> list[HittingCheck]:
    """Probability that dX = -sign(X) dt + dW, X_0 = 0, reaches |X| >= a
    before time ``clock`` (unit weight, so time equals the rescaled clock).

    All levels share the same paths, so estimates are monotone in a.
    """
    a_values = [float(a) for a in a_values]
    if any(a < 1 for a in a_values):
        raise ValueError("levels must satisfy a >= 1")
    if n_paths < 1 or clock <= 0:
        raise ValueError("need a positive clock and at least one path")
    dt = clock / n_steps
    sq = math.sqrt(dt)
    running_max = np.empty(n_paths)
    for c, start in enumerate(range(0, n_paths, chunk)):
        m = min(chunk, n_paths - start)
        g = rng.stream(seed, "hitting", c)
        x = np.zeros(m)
        peak = np.zeros(m)
        for _ in range(n_steps):
            x = x - np.sign(x) * dt + sq * g.standard_normal(m)
            np.maximum(peak, np.abs(x), out=peak)
        running_max[start:start + m] = peak
    out = []
    for a in a_values:
        p = float(np.mean(running_max >= a))
        out.append(HittingCheck(a, clock, p, _binomial_se(p, n_paths),
                                hitting_bound(a, clock), 1.0 / n_paths))
    return out


def hitting_lower_bound_check(a: float, clock: float, n_paths: int, seed: int) -> HittingCheck:
    return hitting_probabilities([a], clock, n_paths, seed)[0]
