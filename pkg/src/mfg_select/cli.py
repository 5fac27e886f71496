"""Command-line harness: ``mfg-select <subcommand> [flags]``.

Every subcommand writes its CSV artifacts, a ``summary.json`` with the
checks it ran and a ``manifest.json`` recording the config hash and library
version.  Exit status is 0 when every requested check passes, 1 on a
numerical failure and 2 on an invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from mfg_select import __version__
from mfg_select.acceptance import SuiteContext, run_suite
from mfg_select.coefficients import table_for
from mfg_select.config import ConfigError, ExperimentConfig, load_config
from mfg_select.cost import cost_closed_form, cost_monte_carlo
from mfg_select.decoupling import SIGMA0_FLOOR, ViscousField, tabulate
from mfg_select.fields import EntropyField, TerminalCondition
from mfg_select.mfg_sim import (
    c_delta,
    classify,
    report_from_labels,
    simulate_ensemble,
    tau_epsilon,
    tau_gamma_escape,
    tau_epsilon_index,
    transition_point,
)
from mfg_select.nplayer import PicardConfig, aggregate_ensemble, exact_runs

COMMAND_KIND = {
    "coeffs": "coeffs",
    "field": "field",
    "simulate-mfg": "mfg",
    "simulate-nplayer": "nplayer",
    "cost": "cost",
    "verify": "verify",
}

DEFAULT_CSV = {
    "coeffs": "coefficients.csv",
    "field": "field.csv",
    "mfg": "mfg_paths.csv",
    "nplayer": "nplayer_runs.csv",
    "cost": "cost.csv",
    "verify": None,
}


class Outputs:
    """Resolve ``--out``: a path ending in .csv names the main CSV and its
    parent holds the JSON files; anything else is a directory."""

    def __init__(self, out: str, kind: str):
        p = Path(out)
        if p.suffix.lower() == ".csv":
            self.dir, self.csv = p.parent, p
        else:
            self.dir = p
            name = DEFAULT_CSV[kind]
            self.csv = p / name if name else None
        self.dir.mkdir(parents=True, exist_ok=True)

    def file(self, name: str) -> Path:
        return self.dir / name


def _r(x) -> str:
    """Shortest round-trip text for a float; empty for missing values."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# ---------------------------------------------------------------- runners

def run_coeffs(cfg: ExperimentConfig, out: Outputs):
    table = table_for(cfg.model, cfg.dt)
    table.to_csv(out.csv)
    checks = {"r_delta_positive": table.r_delta > 0}
    measured = {"r_delta": table.r_delta, "k_T": table.k_T, "k_delta": table.k_delta,
                "w_0": float(table.w[0])}
    return checks, measured


def run_field(cfg: ExperimentConfig, out: Outputs):
    table = table_for(cfg.model, cfg.dt)
    xs = np.linspace(cfg.x_min, cfg.x_max, cfg.nx)
    tabulate(table, cfg.sigma0, cfg.t_values, xs, out.csv)
    g = TerminalCondition(table.r_delta)
    _write_csv(out.file("terminal.csv"), ["x", "value"],
               [[_r(x), _r(v)] for x, v in zip(xs, g(xs))])
    t_mid = cfg.t_values[len(cfg.t_values) // 2]
    _write_csv(out.file("entropy.csv"), ["x", "value"],
               [[_r(x), _r(v)] for x, v in zip(xs, EntropyField(table)(t_mid, xs))])
    vals = ViscousField(table, cfg.sigma0)(np.asarray(cfg.t_values)[:, None], xs[None, :])
    checks = {"bounded_by_one": bool(np.all(np.abs(vals) <= 1.0)),
              "non_increasing_in_x": bool(np.all(np.diff(vals, axis=1) <= 1e-12))}
    return checks, {"sigma0": cfg.sigma0, "points": int(vals.size), "entropy_t": t_mid}


def run_mfg(cfg: ExperimentConfig, out: Outputs):
    table = table_for(cfg.model, cfg.dt)
    ens = simulate_ensemble(cfg.sigma0, table, cfg.paths, cfg.seed, threads=cfg.threads,
                            xi=cfg.model.xi)
    labels = classify(ens.values, table, cfg.tolerance)
    tp = transition_point(cfg.sigma0, cfg.L_exponent)
    tau = np.atleast_1d(tau_epsilon(ens.values, table.grid, tp.epsilon0))
    idx = tau_epsilon_index(ens.values, tp.epsilon0)
    side = np.sign(ens.values[np.arange(len(ens)), idx]).astype(int)
    exited = np.abs(ens.values[np.arange(len(ens)), idx]) > tp.epsilon0
    escape = np.full(len(ens), np.nan)
    gamma = 0.5 * c_delta(table)
    for s in (1, -1):
        sel = exited & (side == s)
        if sel.any():
            escape[sel] = tau_gamma_escape(ens.values[sel], table, gamma, tp, s)
    _write_csv(out.csv, ["path_id", "terminal", "class", "tau_eps", "tau_escape"],
               [[int(j), _r(ens.values[j, -1]), int(labels[j]), _r(tau[j]), _r(escape[j])]
                for j in range(len(ens))])
    rep = report_from_labels(labels, cfg.tolerance, tau)
    checks = {"all_finite": bool(np.all(np.isfinite(ens.values)))}
    return checks, {"selection": rep.as_dict(), "epsilon0": tp.epsilon0, "gamma": gamma}


def run_nplayer(cfg: ExperimentConfig, out: Outputs):
    table = table_for(cfg.model, cfg.dt)
    rows = []
    if cfg.exact:
        pc = PicardConfig(max_iterations=cfg.picard_iters)
        runs = exact_runs(cfg.n, cfg.runs, cfg.tolerance, cfg.seed, table, pc)
        labels = np.array([r.label for r in runs])
        for r in runs:
            rows.append([r.run_id, _r(r.terminal_mean), r.label, r.picard_iters,
                         int(r.converged), _r(r.sup_gap_vs_aggregate)])
        gaps = [r.sup_gap_vs_aggregate for r in runs]
        extra = {"median_sup_gap": float(np.median(gaps)),
                 "converged_fraction": float(np.mean([r.converged for r in runs]))}
    else:
        mu = aggregate_ensemble(cfg.n, table, cfg.runs, cfg.seed, cfg.threads)
        labels = classify(mu, table, cfg.tolerance)
        for j in range(cfg.runs):
            rows.append([j, _r(mu[j, -1]), int(labels[j]), 0, "", ""])
        extra = {}
    _write_csv(out.csv, ["run_id", "terminal_mean", "class", "picard_iters", "converged",
                         "sup_gap_vs_aggregate"], rows)
    rep = report_from_labels(labels, cfg.tolerance)
    return {"runs_completed": len(rows) == cfg.runs}, {"selection": rep.as_dict(), **extra}


def run_cost(cfg: ExperimentConfig, out: Outputs):
    table = table_for(cfg.model, cfg.dt)
    rows, measured = [], {}
    for A in (-1.0, 0.0, 1.0):
        J = cost_closed_form(A, cfg.model, table)
        mc = cost_monte_carlo(A, cfg.cost_paths, cfg.seed, cfg.model, table, cfg.threads)
        rows.append([_r(A), _r(J), _r(mc.estimate), _r(mc.standard_error)])
        measured[str(A)] = {"closed": J, "mc": mc.estimate, "se": mc.standard_error}
    _write_csv(out.csv, ["A", "J_closed", "J_mc", "se"], rows)
    header = "A,J_closed,J_mc,se"
    print(header)
    for r in rows:
        print(",".join(r))
    Jm, J0, Jp = (measured[k]["closed"] for k in ("-1.0", "0.0", "1.0"))
    checks = {"minimal_at_zero": J0 < Jm and J0 < Jp, "symmetric": Jm == Jp,
              "mc_within_3se": all(abs(v["mc"] - v["closed"]) <= 3 * v["se"]
                                   for v in measured.values())}
    return checks, measured


def run_verify(cfg: ExperimentConfig, out: Outputs, only=None):
    table = table_for(cfg.model, cfg.dt)
    ctx = SuiteContext(table=table, seed=cfg.seed, threads=cfg.threads,
                       mfg_paths=cfg.paths, tolerance=cfg.tolerance)
    results = run_suite(ctx, only=only, echo=print)
    checks = {f"criterion_{r.number}": r.passed for r in results}
    return checks, {"criteria": [r.as_dict() for r in results]}


RUNNERS = {
    "coeffs": run_coeffs,
    "field": run_field,
    "mfg": run_mfg,
    "nplayer": run_nplayer,
    "cost": run_cost,
}


# ------------------------------------------------------------------ parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory, or a .csv path for the main table")
    p.add_argument("--threads", type=int, help="worker threads (default: $MFG_SELECT_THREADS or 1)")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--kappa", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--xi", type=float, help="initial mean")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfg-select",
        description="Equilibrium selection experiments for a linear-quadratic mean-field game.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coeffs", help="tabulate eta, w, r, k")
    _common(p)

    p = sub.add_parser("field", help="tabulate the viscous and entropy fields")
    _common(p)
    p.add_argument("--sigma0", type=float)
    p.add_argument("--t-values", type=float, nargs="+", dest="t_values")
    p.add_argument("--x-min", type=float, dest="x_min")
    p.add_argument("--x-max", type=float, dest="x_max")
    p.add_argument("--nx", type=int)

    p = sub.add_parser("simulate-mfg", help="mean paths under common noise")
    _common(p)
    p.add_argument("--sigma0", type=float)
    p.add_argument("--paths", type=int)
    p.add_argument("--tolerance", type=float)

    p = sub.add_parser("simulate-nplayer", help="finite-population runs")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--exact", action="store_true", default=None,
                   help="solve the full particle system instead of the aggregate")
    p.add_argument("--picard-iters", type=int, dest="picard_iters")

    p = sub.add_parser("cost", help="closed-form and Monte Carlo equilibrium costs")
    _common(p)
    p.add_argument("--paths", type=int, dest="cost_paths")

    p = sub.add_parser("verify", help="run a verification suite")
    _common(p)
    p.add_argument("--suite", choices=["acceptance"])
    p.add_argument("--criteria", type=int, nargs="+",
                   help="run only these criterion numbers")
    return parser


_NOT_CONFIG = {"command", "config", "criteria"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    criteria = getattr(args, "criteria", None)
    kind = COMMAND_KIND[args.command]
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    overrides["kind"] = kind
    try:
        cfg = load_config(args.config, overrides)
        if kind == "nplayer" and not cfg.exact and cfg.model.sigma / math.sqrt(cfg.n) < SIGMA0_FLOOR:
            raise ConfigError(f"N={cfg.n} puts the aggregate noise below the field floor "
                              f"{SIGMA0_FLOOR}")
        if kind == "nplayer" and cfg.exact and cfg.n > PicardConfig().max_players:
            raise ConfigError(f"exact solver supports N <= {PicardConfig().max_players}")
        if criteria and any(not 1 <= c <= 10 for c in criteria):
            raise ConfigError("criteria must be between 1 and 10")
        out = Outputs(cfg.out, kind)
    except ConfigError as exc:
        print(f"mfg-select: invalid configuration: {exc}", file=sys.stderr)
        return 2

    try:
        if kind == "verify":
            checks, measured = run_verify(cfg, out, criteria)
        else:
            checks, measured = RUNNERS[kind](cfg, out)
    except (ArithmeticError, FloatingPointError) as exc:
        checks, measured = {"numerics": False}, {"error": str(exc)}
    ok = all(checks.values())
    _write_json(out.file("summary.json"), {
        "command": args.command, "passed": ok, "checks": checks, "measured": measured})
    _write_json(out.file("manifest.json"), {
        "command": args.command, "version": __version__,
        "config_sha256": cfg.digest(), "config": cfg.to_dict()})
    if not ok:
        failed = ", ".join(k for k, v in checks.items() if not v)
        print(f"mfg-select: failed checks: {failed}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
