"""Finite-population game: the aggregate common-noise reduction and a
Picard/least-squares solver for the full first-order system.

All particle quantities are in rescaled form x = w^-1 X, v = w V, where

    dx^i = -w^-2 v^i dt + sigma w^-1 dW^i,   v^i_t = E[g(m^i_T) | F_t],

and m^i is the leave-one-out mean.  Averaging gives the mean dynamics with
common noise B = N^-1/2 sum W^i of intensity sigma / sqrt(N).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from mfg_select import rng
from mfg_select.coefficients import CoefficientTable, TimeGrid
from mfg_select.decoupling import SIGMA0_FLOOR, ViscousField
from mfg_select.fields import SmoothedTerminal, TerminalCondition
from mfg_select.mfg_sim import SelectionReport, classify, euler_maruyama, report_from_labels


def gamma_N(N: int) -> float:
    return N ** -0.25


def ell_N(N: int) -> float:
    return abs(math.log(N)) ** (1.0 / 9.0)


def exchangeable_sum(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum whose rounding depends only on the multiset of values: entries are
    ordered by magnitude first, so permuting them or flipping every sign
    gives exactly the permuted/negated result."""
    a = np.asarray(a, dtype=float)
    order = np.argsort(np.abs(a), axis=axis, kind="stable")
    return np.take_along_axis(a, order, axis=axis).sum(axis=axis)


def brownian_increments(seed: int, run_id: int, N: int, n_steps: int) -> np.ndarray:
    """Standard normals of shape (N, n_steps) driving the N players of one run."""
    return rng.normals(seed, "nplayer", run_id, (N, n_steps))


def aggregate_normals(increments: np.ndarray) -> np.ndarray:
    incs = np.asarray(increments, dtype=float)
    return exchangeable_sum(incs, axis=0) / math.sqrt(incs.shape[0])


def _aggregate_sigma0(N: int, sigma: float) -> float:
    if N < 1:
        raise ValueError("N must be positive")
    s0 = sigma / math.sqrt(N)
    if s0 < SIGMA0_FLOOR:
        n_max = int((sigma / SIGMA0_FLOOR) ** 2)
        raise ValueError(
            f"sigma/sqrt(N) = {s0:.6g} is below the field floor {SIGMA0_FLOOR}; "
            f"N must be at most {n_max}"
        )
    return s0


@dataclass(frozen=True)
class AggregatePath:
    grid: TimeGrid
    N: int
    mu_hat: np.ndarray
    B_increments: np.ndarray
    seed: int
    run_id: int = 0


def simulate_aggregate(N: int, table: CoefficientTable, seed: int, run_id: int = 0,
                       increments: np.ndarray | None = None,
                       field: ViscousField | None = None) -> AggregatePath:
    sigma = table.params.sigma
    s0 = _aggregate_sigma0(N, sigma)
    if increments is None:
        increments = brownian_increments(seed, run_id, N, table.grid.n_steps)
    xi = aggregate_normals(increments)
    if field is None:
        field = ViscousField(table, s0)
    mu = euler_maruyama(table, field, s0, xi[None, :])[0]
    return AggregatePath(table.grid, N, mu, xi, seed, run_id)


def aggregate_ensemble(N: int, table: CoefficientTable, runs: int, seed: int,
                       threads: int | None = None) -> np.ndarray:
    """mu_hat for ``runs`` independent runs, shape (runs, n+1)."""
    s0 = _aggregate_sigma0(N, table.params.sigma)
    n = table.grid.n_steps

    def drive(run_id):
        return aggregate_normals(brownian_increments(seed, run_id, N, n))

    workers = min(rng.worker_count(threads), max(runs, 1))
    if workers == 1:
        xi = [drive(j) for j in range(runs)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            xi = list(pool.map(drive, range(runs)))
    xi = np.stack(xi) if runs else np.empty((0, n))
    return euler_maruyama(table, ViscousField(table, s0), s0, xi)


# ---------------------------------------------------------------- exact solver

@dataclass(frozen=True)
class PicardConfig:
    max_iterations: int = 30
    damping: float = 0.5
    degree: int = 1
    tolerance: float = 1e-3
    rows_target: int = 2048
    max_players: int = 256
    init: str = "field"
    field_feature: bool = True
    control_variate: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.degree not in (1, 3):
            raise ValueError("degree must be 1 or 3 (odd bases only)")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.init not in ("field", "zero"):
            raise ValueError("init must be 'field' or 'zero'")
        if self.control_variate and not self.field_feature:
            raise ValueError("the control variate needs the field feature")
        if self.init == "field" and not self.field_feature:
            raise ValueError("field initialisation needs the field feature")

    def replicas(self, N: int) -> int:
        return max(1, -(-self.rows_target // N))


class FeatureField:
    """The aggregate field tabulated on every time node over x >= 0 and
    linearly interpolated; odd by construction.  Used only as a regression
    feature, where its interpolation error is absorbed by the fit."""

    def __init__(self, table: CoefficientTable, sigma0: float, n_x: int = 1201):
        field = ViscousField(table, sigma0)
        x_max = table.k_T + 8.0 * sigma0 * math.sqrt(table.k_T) + 0.5
        self.sigma0 = sigma0
        self.xs = np.linspace(0.0, x_max, n_x)
        nodes = table.grid.nodes[:-1]
        self.values = np.stack([field(t, self.xs) for t in nodes])
        self.slopes = np.gradient(self.values, self.xs, axis=1)

    def __call__(self, i: int, x: np.ndarray) -> np.ndarray:
        return np.sign(x) * np.interp(np.abs(x), self.xs, self.values[i])

    def slope(self, i: int, x: np.ndarray) -> np.ndarray:
        return np.interp(np.abs(x), self.xs, self.slopes[i])


# Column layout of the regression basis; lower degrees zero out columns.
_COLUMNS = ("m", "d", "m3", "m2d", "md2", "d3", "field")
_DEGREE_MASKS = {
    3: np.array([1, 1, 1, 1, 1, 1, 1], dtype=bool),
    1: np.array([1, 1, 0, 0, 0, 0, 1], dtype=bool),
    0: np.array([0, 0, 0, 0, 0, 0, 1], dtype=bool),
}
_COND_LIMIT = 1e10


def _features(x, mean, fvals):
    """Odd polynomial features of (leave-one-out mean, own deviation) plus
    the aggregate field value; x has particles on the last axis."""
    N = x.shape[-1]
    m = (N * mean[..., None] - x) / (N - 1)
    d = x - m
    f = np.broadcast_to(fvals[..., None], x.shape)
    return np.stack([m, d, m * m * m, m * m * d, m * d * d, d * d * d, f], axis=-1)


@dataclass(frozen=True)
class ParticleSystem:
    N: int
    grid: TimeGrid
    x_tilde: np.ndarray
    v_tilde: np.ndarray
    increments: np.ndarray
    seed: int
    run_id: int
    iterations: int
    converged: bool
    rank_deficient: bool
    delta_history: tuple = dc_field(default=(), repr=False)
    w: np.ndarray = dc_field(default=None, repr=False)

    @property
    def X(self) -> np.ndarray:
        """States in original units, shape (nodes, N)."""
        return self.w[:, None] * self.x_tilde

    @property
    def V(self) -> np.ndarray:
        return self.v_tilde / self.w[:, None]

    @property
    def mu_tilde(self) -> np.ndarray:
        return exchangeable_sum(self.x_tilde, axis=1) / self.N

    @property
    def v_mean(self) -> np.ndarray:
        return exchangeable_sum(self.v_tilde, axis=1) / self.N


def leave_one_out_mean(system: ParticleSystem, i: int, t_index: int) -> float:
    N = system.N
    if N < 2:
        raise ValueError("leave-one-out mean needs N >= 2")
    row = system.x_tilde[t_index]
    mean = exchangeable_sum(row) / N
    return float((N * mean - row[i]) / (N - 1))


class _Solver:
    def __init__(self, N, table, config, increments, feature=None):
        self.N = N
        self.table = table
        self.cfg = config
        self.inc = increments  # (R, N, n)
        self.R = increments.shape[0]
        grid = table.grid
        self.n = grid.n_steps
        self.t = grid.nodes
        inv_w = 1.0 / np.asarray(table.w)
        self.drift = inv_w[:-1] ** 2 * grid.step
        self.noise = table.params.sigma * inv_w[:-1] * math.sqrt(grid.step)
        s0 = _aggregate_sigma0(N, table.params.sigma)
        if config.field_feature:
            self.field = feature if feature is not None else FeatureField(table, s0)
            if abs(self.field.sigma0 - s0) > 1e-15:
                raise ValueError("feature table built for a different noise level")
        else:
            self.field = None
        self.g = TerminalCondition(table.r_delta)
        top = config.degree
        self.masks = [_DEGREE_MASKS[d] for d in (3, 1, 0) if d <= top]
        if not config.field_feature:
            self.masks = [m & ~_DEGREE_MASKS[0] for m in self.masks if (m & ~_DEGREE_MASKS[0]).any()]
        self.rank_deficient = False
        self.common = exchangeable_sum(increments, axis=1) / N  # (R, n)

    def martingale_tail(self, means):
        """sum_{j >= i} theta_x(t_j, mean_j) d(mean noise)_j for every node i,
        shape (n, R).  Each term has zero mean given F_{t_j}, so subtracting
        the tail from the terminal targets leaves conditional expectations
        unchanged while removing most of the common-noise variance."""
        n = self.n
        slopes = np.stack([self.field.slope(i, means[i]) for i in range(n)])
        incr = slopes * self.noise[:, None] * self.common.T
        return np.cumsum(incr[::-1], axis=0)[::-1]

    def forward(self, coef):
        R, N, n = self.R, self.N, self.n
        xs = np.zeros((n + 1, R, N))
        vs = np.zeros((n, R, N))
        means = np.zeros((n + 1, R))
        fvals = np.zeros((n + 1, R))
        x = np.zeros((R, N))
        for i in range(n):
            mean = exchangeable_sum(x, axis=-1) / N
            f = self.field(i, mean) if self.field is not None else np.zeros(R)
            phi = _features(x, mean, np.asarray(f))
            v = np.clip(phi @ coef[i], -1.0, 1.0)
            x = x - self.drift[i] * v + self.noise[i] * self.inc[:, :, i]
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite particle state at t={self.t[i + 1]:.6g}")
            means[i], fvals[i], vs[i], xs[i + 1] = mean, f, v, x
        means[n] = exchangeable_sum(x, axis=-1) / N
        return xs, vs, means, fvals

    def targets(self, x_T, mean_T):
        N = self.N
        loo = (N * mean_T[:, None] - x_T) / (N - 1)
        return self.g(loo)

    def regress(self, xs, means, fvals, y, block=100):
        n, nb = self.n, len(_COLUMNS)
        coef = np.zeros((n, nb))
        rows = self.R * self.N
        y = np.broadcast_to(y, (n, self.R, self.N)).reshape(n, rows)
        for i0 in range(0, n, block):
            i1 = min(n, i0 + block)
            phi = _features(xs[i0:i1], means[i0:i1], fvals[i0:i1]).reshape(i1 - i0, rows, nb)
            # Canonical row order (invariant under particle relabelling and
            # global sign flips) so Gram sums round identically.
            d = phi[..., 1]
            order = np.argsort(d * d, axis=1, kind="stable")
            phi = np.take_along_axis(phi, order[..., None], axis=1)
            yb = np.take_along_axis(y[i0:i1], order, axis=1)
            scale = np.sqrt(np.mean(phi * phi, axis=1))
            safe = np.where(scale > 0, scale, 1.0)
            phis = phi / safe[:, None, :]
            G = np.matmul(phis.transpose(0, 2, 1), phis) / rows
            c = np.matmul(phis.transpose(0, 2, 1), yb[..., None])[..., 0] / rows
            coef[i0:i1] = self._solve(G, c, scale) / safe
        return coef

    def _solve(self, G, c, scale):
        B, nb = c.shape
        out = np.zeros((B, nb))
        done = np.zeros(B, dtype=bool)
        live = np.any(scale > 1e-300, axis=1)
        for level, mask in enumerate(self.masks):
            cols = np.flatnonzero(mask)
            usable = live & ~done & np.all(scale[:, cols] > 1e-300, axis=1)
            if not usable.any():
                continue
            Gs = G[usable][:, cols][:, :, cols]
            ev = np.linalg.eigvalsh(Gs)
            ok = (ev[:, 0] > 0) & (ev[:, -1] < _COND_LIMIT * ev[:, 0])
            idx = np.flatnonzero(usable)[ok]
            if idx.size:
                sol = np.linalg.solve(Gs[ok], c[idx][:, cols][..., None])[..., 0]
                full = np.zeros((idx.size, nb))
                full[:, cols] = sol
                out[idx] = full
                done[idx] = True
                if level > 0:
                    self.rank_deficient = True
        if np.any(live & ~done):
            self.rank_deficient = True
        return out


def simulate_exact_picard(N: int, table: CoefficientTable, seed: int,
                          config: PicardConfig | None = None, run_id: int = 0,
                          increments: np.ndarray | None = None,
                          feature: FeatureField | None = None) -> ParticleSystem:
    """Fixed-point iteration on frozen Brownian increments.

    ``increments`` (replicas, N, steps) overrides the random draw; replica 0
    is the run whose states are returned, the others only enlarge the
    regression sample.  By default replica 0 uses the same increments as
    :func:`simulate_aggregate` for the same (seed, run_id).
    """
    config = config or PicardConfig()
    if N < 2:
        raise ValueError("N must be at least 2")
    if N > config.max_players:
        raise ValueError(f"N={N} exceeds the exact-solver limit {config.max_players}")
    n = table.grid.n_steps
    if increments is None:
        R = config.replicas(N)
        first = brownian_increments(seed, run_id, N, n)[None]
        extra = rng.stream(seed, "picard", run_id).standard_normal((R - 1, N, n))
        increments = np.concatenate([first, extra])
    increments = np.asarray(increments, dtype=float)
    if increments.ndim == 2:
        increments = increments[None]
    if increments.shape[1:] != (N, n):
        raise ValueError("increments must have shape (replicas, N, steps)")

    solver = _Solver(N, table, config, increments, feature)
    coef = np.zeros((n, len(_COLUMNS)))
    if config.init == "field":
        coef[:, -1] = 1.0
    xs, vs, means, fvals = solver.forward(coef)
    history = []
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        y = solver.targets(xs[-1], means[-1])
        if config.control_variate:
            y = y[None] - solver.martingale_tail(means)[:, :, None]
        new = solver.regress(xs, means, fvals, y)
        coef = (1.0 - config.damping) * coef + config.damping * new
        xs, vs_new, means, fvals = solver.forward(coef)
        # Auxiliary replicas near the origin can flip sides between passes
        # without moving the returned run, so only replica 0 is monitored.
        delta = float(np.max(np.abs(vs_new[:, 0] - vs[:, 0])))
        history.append(delta)
        vs = vs_new
        if delta < config.tolerance:
            converged = True
            break
    y = solver.targets(xs[-1], means[-1])
    v_full = np.concatenate([vs[:, 0], y[None, 0]], axis=0)
    return ParticleSystem(
        N=N, grid=table.grid, x_tilde=xs[:, 0].copy(), v_tilde=v_full,
        increments=increments[0].copy(), seed=seed, run_id=run_id, iterations=it,
        converged=converged, rank_deficient=solver.rank_deficient,
        delta_history=tuple(history), w=np.asarray(table.w).copy(),
    )


def picard_first_pass(N: int, table: CoefficientTable, seed: int, run_id: int = 0):
    """States under V = 0 and the terminal targets they induce, for
    inspecting the start of the iteration."""
    cfg = PicardConfig(init="zero", max_iterations=1)
    n = table.grid.n_steps
    inc = brownian_increments(seed, run_id, N, n)[None]
    solver = _Solver(N, table, cfg, inc)
    xs, vs, means, _ = solver.forward(np.zeros((n, len(_COLUMNS))))
    return xs[:, 0], solver.targets(xs[-1], means[-1])[0]


# ---------------------------------------------------------------- diagnostics

def sup_gap_vs_aggregate(system: ParticleSystem, table: CoefficientTable) -> float:
    agg = simulate_aggregate(system.N, table, system.seed, system.run_id,
                             increments=system.increments)
    return float(np.max(np.abs(system.mu_tilde - agg.mu_hat)))


def loo_distance_check(system: ParticleSystem, table: CoefficientTable) -> tuple[float, float]:
    """(max_i |mean_T - loo_i_T|, 2/N (K_T + sigma max_i |int w^-1 dW^i|))
    with K the left-point clock used by the scheme."""
    N = system.N
    dt = table.grid.step
    inv_w = 1.0 / np.asarray(table.w[:-1])
    clock = float(np.sum(inv_w ** 2) * dt)
    stoch = np.abs(np.cumsum(inv_w[None, :] * math.sqrt(dt) * system.increments, axis=1))
    bound = 2.0 / N * (clock + table.params.sigma * float(stoch.max()))
    row = system.x_tilde[-1]
    mean = exchangeable_sum(row) / N
    loo = (N * mean - row) / (N - 1)
    return float(np.max(np.abs(mean - loo))), bound


def comparison_slack(system: ParticleSystem, table: CoefficientTable) -> float:
    """max_t (v^N_t - theta_tilde(t, mu^N_t))_+ with theta_tilde the field of
    the smoothed terminal data; positive values measure how far the
    comparison inequality is from holding on this run."""
    gamma = min(gamma_N(system.N), 0.45 * table.r_delta)
    s0 = _aggregate_sigma0(system.N, table.params.sigma)
    tilde = ViscousField(table, s0, terminal=SmoothedTerminal(table.r_delta, gamma))
    t = table.grid.nodes[:-1]
    gap = system.v_mean[:-1] - tilde(t, system.mu_tilde[:-1])
    return float(max(0.0, gap.max()))


def nplayer_selection_stats(N: int, runs: int, tolerance: float, seed: int,
                            table: CoefficientTable, threads: int | None = None) -> SelectionReport:
    mu = aggregate_ensemble(N, table, runs, seed, threads)
    return report_from_labels(classify(mu, table, tolerance), tolerance)


@dataclass(frozen=True)
class ExactRunSummary:
    run_id: int
    terminal_mean: float
    label: int
    picard_iters: int
    converged: bool
    sup_gap_vs_aggregate: float


def exact_runs(N: int, runs: int, tolerance: float, seed: int, table: CoefficientTable,
               config: PicardConfig | None = None) -> list[ExactRunSummary]:
    config = config or PicardConfig()
    feature = None
    if config.field_feature:
        feature = FeatureField(table, _aggregate_sigma0(N, table.params.sigma))
    out = []
    for j in range(runs):
        sys_ = simulate_exact_picard(N, table, seed, config, run_id=j, feature=feature)
        mu = sys_.mu_tilde
        out.append(ExactRunSummary(
            run_id=j,
            terminal_mean=float(mu[-1]),
            label=int(classify(mu, table, tolerance)[0]),
            picard_iters=sys_.iterations,
            converged=sys_.converged,
            sup_gap_vs_aggregate=sup_gap_vs_aggregate(sys_, table),
        ))
    return out
