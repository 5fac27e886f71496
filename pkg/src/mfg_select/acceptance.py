"""Acceptance suite on the canonical configuration.

Each check returns a :class:`CriterionResult`; a criterion passes when its
numerical claims hold and it finishes within its time budget.  The same
functions back ``mfg-select verify`` and the pytest acceptance module.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mfg_select.coefficients import CoefficientTable, canonical_table
from mfg_select.cost import cost_report
from mfg_select.decoupling import (
    ViscousField,
    l1_comparison,
    pde_residual,
    psi,
    psi_bound,
    quadrature_oracle,
)
from mfg_select.fields import TerminalCondition, admissible_parameters, equilibrium_path
from mfg_select.mfg_sim import (
    c_delta,
    classify,
    escape_fraction,
    report_from_labels,
    simulate_ensemble,
    tau_epsilon,
    transition_point,
)
from mfg_select.nplayer import (
    PicardConfig,
    exact_runs,
    nplayer_selection_stats,
    simulate_exact_picard,
)

SIGMA0_SWEEP = (0.2, 0.1, 0.05)
N_SWEEP = (64, 256, 1024)
N_EXACT = (8, 32, 128)


@dataclass
class CriterionResult:
    number: int
    title: str
    claims_hold: bool
    measured: dict
    runtime: float
    budget: float

    @property
    def passed(self) -> bool:
        return self.claims_hold and self.runtime <= self.budget

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return (f"criterion {self.number:2d} {status}  {self.title}  "
                f"[{self.runtime:.1f}s / {self.budget:.0f}s]  {parts}")

    def as_dict(self) -> dict:
        return {
            "criterion": self.number,
            "title": self.title,
            "passed": self.passed,
            "claims_hold": self.claims_hold,
            "runtime_s": round(self.runtime, 3),
            "budget_s": self.budget,
            "measured": _jsonable(self.measured),
        }


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def _non_increasing(values, ses, k=3.0) -> bool:
    """Each value is at most the previous one plus k joint standard errors."""
    return all(b <= a + k * math.hypot(sa, sb)
               for a, b, sa, sb in zip(values, values[1:], ses, ses[1:]))


@dataclass
class SuiteContext:
    table: CoefficientTable = field(default_factory=canonical_table)
    seed: int = 0
    threads: int | None = None
    mfg_paths: int = 2000
    tolerance: float = 0.15
    _ensembles: dict = field(default_factory=dict, repr=False)

    def ensemble(self, sigma0: float):
        if sigma0 not in self._ensembles:
            self._ensembles[sigma0] = simulate_ensemble(
                sigma0, self.table, self.mfg_paths, self.seed, threads=self.threads)
        return self._ensembles[sigma0]


def _timed(number, title, budget):
    def wrap(fn: Callable[[SuiteContext], tuple[bool, dict]]):
        def run(ctx: SuiteContext) -> CriterionResult:
            t0 = time.perf_counter()
            ok, measured = fn(ctx)
            return CriterionResult(number, title, bool(ok), measured,
                                   time.perf_counter() - t0, budget)
        run.number = number
        run.title = title
        return run
    return wrap


@_timed(1, "three equilibria satisfy the terminal matching", 1.0)
def criterion_1(ctx):
    tab = ctx.table
    g = TerminalCondition(tab.r_delta)
    err0 = max(abs(float(g(-A * tab.k_T)) - A) for A in (-1.0, 0.0, 1.0))
    xi = 0.05
    errs = []
    for A in admissible_parameters(xi, tab):
        path = equilibrium_path(A, xi, tab)
        errs.append(abs(float(g(path.mu[-1])) - A))
    err_xi = max(errs)
    return max(err0, err_xi) <= 1e-9, {"max_err_xi0": err0, "max_err_xi0.05": err_xi}


@_timed(2, "zero-mean equilibrium has the smallest cost", 60.0)
def criterion_2(ctx):
    tab = ctx.table
    rep = cost_report(tab.params, tab, n_paths=100_000, seed=ctx.seed, threads=ctx.threads)
    closed = {-1.0: rep.J_minus, 0.0: rep.J_zero, 1.0: rep.J_plus}
    z = {A: abs(rep.mc_estimates[A][0] - closed[A]) / rep.mc_estimates[A][1] for A in closed}
    sym = abs(rep.J_plus - rep.J_minus)
    ok = rep.minimal_at_zero and sym <= 4 * np.finfo(float).eps * abs(rep.J_plus) and max(z.values()) <= 3.0
    return ok, {"J_minus": rep.J_minus, "J_zero": rep.J_zero, "J_plus": rep.J_plus,
                "J_plus_minus_J_minus": sym, "mc_z": [z[-1.0], z[0.0], z[1.0]]}


RESIDUAL_STEPS = (0.04, 0.02, 0.01, 0.005)
RESIDUAL_POINTS = ((0.25, 0.1, 0.2), (0.75, 0.05, 0.1), (0.4, -0.3, 0.5))


@_timed(3, "semi-analytic field matches quadrature; PDE residual is second order", 60.0)
def criterion_3(ctx):
    tab = ctx.table
    ts = np.linspace(0.0, tab.horizon, 21)
    xs = np.linspace(-1.0, 1.0, 21)
    worst = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s0 in (0.5, 0.2, 0.1):
            f = ViscousField(tab, s0)
            err = 0.0
            for t in ts:
                vals = f(t, xs)
                ref = np.array([quadrature_oracle(t, x, s0, tab) for x in xs])
                err = max(err, float(np.max(np.abs(vals - ref))))
            worst[s0] = err
    orders = []
    for t, x, s0 in RESIDUAL_POINTS:
        res = [abs(pde_residual(t, x, s0, h, h, tab)) for h in RESIDUAL_STEPS]
        orders.append(min(math.log2(a / b) for a, b in zip(res, res[1:])))
    ok = max(worst.values()) <= 1e-8 and min(orders) >= 1.8
    return ok, {"oracle_err": [worst[s] for s in (0.5, 0.2, 0.1)], "min_order": min(orders)}


@_timed(4, "viscous-minus-entropy gap stays under its explicit bound", 60.0)
def criterion_4(ctx):
    tab = ctx.table
    ts = np.linspace(0.0, tab.delta, 21)[:-1]
    fracs = np.linspace(0.05, 0.95, 21)
    worst, count = -math.inf, 0
    for s0 in SIGMA0_SWEEP:
        for t in ts:
            width = float(tab.r_at(t)) - tab.r_delta
            xs = np.concatenate([fracs * width, -fracs * width])
            gaps = np.abs(psi(t, xs, s0, tab))
            bounds = np.array([psi_bound(t, x, s0, tab) for x in xs])
            worst = max(worst, float(np.max(gaps - bounds)))
            count += xs.size
    return worst <= 1e-6, {"max_excess": worst, "points": count}


@_timed(5, "smoothed terminal data dominates with bounded L1 gap", 60.0)
def criterion_5(ctx):
    tab = ctx.table
    gamma = 0.05
    bound = 2.0 * gamma ** 2 / tab.r_delta
    gaps, mins = [], []
    for s0 in (0.3, 0.1):
        for t in (0.0, 0.5, 0.9):
            gap, lo = l1_comparison(t, s0, gamma, tab)
            gaps.append(gap)
            mins.append(lo)
    ok = min(mins) >= -1e-9 and max(gaps) <= bound + 1e-6
    return ok, {"max_l1": max(gaps), "bound": bound, "min_diff": min(mins)}


@_timed(6, "vanishing common noise splits evenly between the extreme equilibria", 600.0)
def criterion_6(ctx):
    reports = []
    for s0 in SIGMA0_SWEEP:
        ens = ctx.ensemble(s0)
        reports.append(report_from_labels(classify(ens.values, ctx.table, ctx.tolerance), ctx.tolerance))
    last = reports[-1]
    trend = _non_increasing([r.frac_unclassified for r in reports],
                            [r.se_unclassified for r in reports])
    ok = 0.46 <= last.frac_plus <= 0.54 and last.frac_unclassified <= 0.05 and trend
    return ok, {"frac_plus": [r.frac_plus for r in reports],
                "unclassified": [r.frac_unclassified for r in reports], "trend": trend}


@_timed(7, "transition point is reached early and the escape envelope holds", 600.0)
def criterion_7(ctx):
    tab = ctx.table
    gamma = 0.5 * c_delta(tab)
    late, late_se, esc, esc_se = [], [], [], []
    for s0 in SIGMA0_SWEEP:
        ens = ctx.ensemble(s0)
        tp = transition_point(s0)
        tau = np.atleast_1d(tau_epsilon(ens.values, tab.grid, tp.epsilon0))
        m = tau.size
        p = float(np.mean(tau > math.sqrt(s0)))
        late.append(p)
        late_se.append(math.sqrt(p * (1 - p) / m))
        q, exits = escape_fraction(ens.values, tab, gamma, tp)
        esc.append(q)
        esc_se.append(math.sqrt(q * (1 - q) / exits) if exits else 0.0)
    trends = (_non_increasing(late, late_se), _non_increasing(esc, esc_se))
    ok = late[-1] <= 0.1 and esc[-1] <= 0.05 and all(trends)
    return ok, {"late_fraction": late, "escape_violation": esc,
                "late_trend": trends[0], "escape_trend": trends[1]}


@_timed(8, "finite-population aggregate splits evenly at N = 1024", 600.0)
def criterion_8(ctx):
    reports = [nplayer_selection_stats(N, 500, ctx.tolerance, ctx.seed, ctx.table, ctx.threads)
               for N in N_SWEEP]
    last = reports[-1]
    trend = _non_increasing([r.frac_unclassified for r in reports],
                            [r.se_unclassified for r in reports])
    ok = 0.43 <= last.frac_plus <= 0.57 and last.frac_unclassified <= 0.10 and trend
    return ok, {"frac_plus": [r.frac_plus for r in reports],
                "unclassified": [r.frac_unclassified for r in reports], "trend": trend}


@_timed(9, "exact particle system approaches the aggregate as N grows", 900.0)
def criterion_9(ctx):
    medians, conv = [], []
    for N in N_EXACT:
        runs = exact_runs(N, 20, ctx.tolerance, ctx.seed, ctx.table)
        medians.append(float(np.median([r.sup_gap_vs_aggregate for r in runs])))
        conv.append(float(np.mean([r.converged for r in runs])))
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    ok = decreasing and min(conv) >= 0.9
    return ok, {"median_gap": medians, "converged": conv}


@_timed(10, "symmetry, monotonicity, boundedness and determinism", 60.0)
def criterion_10(ctx):
    tab = ctx.table
    half = np.linspace(0.0, 1.5, 301)
    xs = np.concatenate([-half[:0:-1], half])
    ts = np.linspace(0.0, tab.horizon, 11)
    odd_err = mono_err = bound_err = 0.0
    for s0 in (0.5, 0.2, 0.1, 0.05):
        f = ViscousField(tab, s0)
        vals = f(ts[:, None], xs[None, :])
        odd_err = max(odd_err, float(np.max(np.abs(vals + vals[:, ::-1]))))
        mono_err = max(mono_err, float(np.max(np.diff(vals, axis=1))))
        bound_err = max(bound_err, float(np.max(np.abs(vals))) - 1.0)

    ens = simulate_ensemble(0.1, tab, 64, ctx.seed)
    flipped = simulate_ensemble(0.1, tab, 64, ctx.seed, normals=-ens.normals)
    flip_err = float(np.max(np.abs(flipped.values + ens.values)))
    again = simulate_ensemble(0.1, tab, 64, ctx.seed, threads=2)
    det = bool(np.array_equal(again.values, ens.values))

    cfg = PicardConfig(max_iterations=4, rows_target=64)
    inc = np.random.default_rng(ctx.seed).standard_normal((16, 4, tab.grid.n_steps))
    a = simulate_exact_picard(4, tab, ctx.seed, cfg, increments=inc)
    b = simulate_exact_picard(4, tab, ctx.seed, cfg, increments=-inc)
    perm = simulate_exact_picard(4, tab, ctx.seed, cfg, increments=inc[:, ::-1])
    particle_flip = float(np.max(np.abs(a.x_tilde + b.x_tilde)))
    particle_perm = float(np.max(np.abs(a.x_tilde[:, ::-1] - perm.x_tilde)))

    errs = [odd_err, max(mono_err, 0.0), max(bound_err, 0.0), flip_err, particle_flip, particle_perm]
    ok = max(errs) <= 1e-10 and det
    return ok, {"odd": odd_err, "monotone_excess": max(mono_err, 0.0),
                "bound_excess": max(bound_err, 0.0), "path_flip": flip_err,
                "particle_flip": particle_flip, "particle_perm": particle_perm,
                "deterministic": det}


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10)


def run_suite(ctx: SuiteContext | None = None, only=None, echo=None) -> list[CriterionResult]:
    ctx = ctx or SuiteContext()
    wanted = set(only) if only else {c.number for c in CRITERIA}
    out = []
    for check in CRITERIA:
        if check.number in wanted:
            res = check(ctx)
            if echo:
                echo(res.line())
            out.append(res)
    return out
