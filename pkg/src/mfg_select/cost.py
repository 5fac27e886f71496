"""Cost of each equilibrium of the noise-free game, in closed form and by
Monte Carlo.

At the equilibrium with parameter A the representative state follows

    dX = [(kappa - eta) X - A w^-1] dt + sigma dW,   X_0 = 0,

with feedback alpha = -eta X - A w^-1, so E[X_t] = -A w_t k_t and
Var[X_t] = sigma^2 w_t^2 k_t.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson, trapezoid

from mfg_select import rng
from mfg_select.coefficients import CoefficientTable, ModelParams

_MC_CHUNK = 5000


def _integrate(values, dx, rule):
    if rule == "simpson":
        return float(simpson(values, dx=dx))
    if rule == "trapezoid":
        return float(trapezoid(values, dx=dx))
    raise ValueError(f"unknown quadrature rule {rule!r}")


def a_squared_integrand(table: CoefficientTable) -> np.ndarray:
    """(1 + eta^2) w^2 k^2 - 2 eta k + w^-2 on the grid."""
    eta, w, k = (np.asarray(a) for a in (table.eta, table.w, table.k))
    return (1.0 + eta ** 2) * w ** 2 * k ** 2 - 2.0 * eta * k + w ** -2


def a_squared_bracket(table: CoefficientTable, rule: str = "simpson") -> float:
    """Coefficient of A^2 / 2 in J_A."""
    w_T, k_T = float(table.w[-1]), table.k_T
    return _integrate(a_squared_integrand(table), table.grid.step, rule) + (1.0 - w_T * k_T) ** 2


def noise_cost(params: ModelParams, table: CoefficientTable, rule: str = "simpson") -> float:
    eta, w, k = (np.asarray(a) for a in (table.eta, table.w, table.k))
    s2 = params.sigma ** 2
    running = _integrate((1.0 + eta ** 2) * s2 * w ** 2 * k, table.grid.step, rule)
    return 0.5 * float(table.w[-1]) ** 2 * s2 * table.k_T + 0.5 * running


def cost_closed_form(A: float, params: ModelParams, table: CoefficientTable,
                     rule: str = "simpson") -> float:
    """J_A including the A-independent sigma^2 part.  Any real A is
    accepted so the A^2 scaling can be probed; only -1, 0, 1 are equilibria."""
    return 0.5 * A * A * a_squared_bracket(table, rule) + noise_cost(params, table, rule)


def cost_gap_trapezoid(table: CoefficientTable) -> float:
    """J_{+-1} - J_0 rebuilt from scratch with the trapezoid rule, including
    a trapezoid reconstruction of w and k from eta."""
    t = np.asarray(table.nodes)
    eta = np.asarray(table.eta)
    kappa = table.params.kappa
    h = np.diff(t)
    seg = 0.5 * h * ((eta - kappa)[1:] + (eta - kappa)[:-1])
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    w = np.exp(tail)
    iw2 = w ** -2
    k = np.concatenate([[0.0], np.cumsum(0.5 * h * (iw2[1:] + iw2[:-1]))])
    f = (1.0 + eta ** 2) * w ** 2 * k ** 2 - 2.0 * eta * k + iw2
    integral = float(np.sum(0.5 * h * (f[1:] + f[:-1])))
    return 0.5 * (integral + (1.0 - w[-1] * k[-1]) ** 2)


def mean_variance_at_equilibrium(A: float, t: float, table: CoefficientTable,
                                 sigma: float | None = None) -> tuple[float, float]:
    if sigma is None:
        sigma = table.params.sigma
    j = table.grid.index_of(t)
    if abs(table.nodes[j] - t) > 1e-9 * max(1.0, table.horizon):
        raise ValueError("t must be a grid node")
    w, k = float(table.w[j]), float(table.k[j])
    return -A * w * k, w * w * sigma * sigma * k


@dataclass(frozen=True)
class MonteCarloCost:
    A: float
    estimate: float
    standard_error: float
    n_paths: int
    mean_path: np.ndarray = field(repr=False)
    var_path: np.ndarray = field(repr=False)


def _mc_chunk(A, m, seed, chunk_id, params, table):
    grid = table.grid
    dt = grid.step
    sq = math.sqrt(dt)
    eta = np.asarray(table.eta)
    inv_w = 1.0 / np.asarray(table.w)
    kappa, sigma = params.kappa, params.sigma
    g = rng.stream(seed, "cost", chunk_id)
    n = grid.n_steps
    x = np.zeros(m)
    sums = np.zeros(n + 1)
    sq_sums = np.zeros(n + 1)

    def running(i, x):
        alpha = -eta[i] * x - A * inv_w[i]
        return 0.5 * (alpha * alpha + x * x)

    acc = 0.5 * running(0, x)
    for i in range(n):
        drift = (kappa - eta[i]) * x - A * inv_w[i]
        x = x + drift * dt + sigma * sq * g.standard_normal(m)
        sums[i + 1] = x.sum()
        sq_sums[i + 1] = (x * x).sum()
        acc = acc + (0.5 if i == n - 1 else 1.0) * running(i + 1, x)
    cost = acc * dt + 0.5 * (x + A) ** 2
    return cost, sums, sq_sums


def cost_monte_carlo(A: float, n_paths: int, seed: int, params: ModelParams,
                     table: CoefficientTable, threads: int | None = None) -> MonteCarloCost:
    """Euler simulation of the equilibrium state with trapezoidal running
    cost.  Chunks have fixed size and their own streams, so the result does
    not depend on the thread count."""
    if n_paths < 100:
        raise ValueError("need at least 100 paths")
    sizes = [min(_MC_CHUNK, n_paths - s) for s in range(0, n_paths, _MC_CHUNK)]
    jobs = list(enumerate(sizes))

    def run(job):
        cid, m = job
        return _mc_chunk(A, m, seed, cid, params, table)

    workers = min(rng.worker_count(threads), len(jobs))
    if workers == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    costs = np.concatenate([r[0] for r in results])
    sums = np.sum([r[1] for r in results], axis=0)
    sq_sums = np.sum([r[2] for r in results], axis=0)
    mean = sums / n_paths
    var = (sq_sums - n_paths * mean ** 2) / (n_paths - 1)
    return MonteCarloCost(
        A=float(A),
        estimate=float(costs.mean()),
        standard_error=float(costs.std(ddof=1) / math.sqrt(n_paths)),
        n_paths=n_paths,
        mean_path=mean,
        var_path=var,
    )


@dataclass(frozen=True)
class CostReport:
    J_minus: float
    J_zero: float
    J_plus: float
    mc_estimates: dict = field(default_factory=dict)

    @property
    def minimal_at_zero(self) -> bool:
        return self.J_zero < self.J_plus and self.J_zero < self.J_minus


def cost_report(params: ModelParams, table: CoefficientTable, n_paths: int = 0,
                seed: int = 0, threads: int | None = None) -> CostReport:
    J = {A: cost_closed_form(A, params, table) for A in (-1.0, 0.0, 1.0)}
    mc = {}
    if n_paths:
        for A in (-1.0, 0.0, 1.0):
            res = cost_monte_carlo(A, n_paths, seed, params, table, threads)
            mc[A] = (res.estimate, res.standard_error)
    return CostReport(J[-1.0], J[0.0], J[1.0], mc)
