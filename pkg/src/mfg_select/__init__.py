"""Equilibrium selection experiments for a linear-quadratic mean-field game
with three equilibria.

The package compares three ways of picking an equilibrium: minimal cost,
vanishing common noise, and the large-population limit of the finite game.
"""

__version__ = "0.1.0"

from mfg_select.coefficients import (
    CoefficientTable,
    ModelParams,
    TimeGrid,
    build_coefficients,
    canonical_table,
    make_grid,
    solve_riccati,
    table_for,
)
from mfg_select.cost import CostReport, cost_closed_form, cost_monte_carlo, cost_report
from mfg_select.decoupling import ViscousField, quadrature_oracle
from mfg_select.fields import (
    EntropyField,
    EquilibriumTriple,
    SmoothedTerminal,
    TerminalCondition,
    equilibrium_path,
)
from mfg_select.mfg_sim import (
    PathEnsemble,
    SelectionReport,
    selection_stats,
    simulate_ensemble,
    simulate_mu,
    transition_point,
)
from mfg_select.nplayer import (
    PicardConfig,
    ParticleSystem,
    nplayer_selection_stats,
    simulate_aggregate,
    simulate_exact_picard,
)

__all__ = [
    "CoefficientTable",
    "CostReport",
    "EntropyField",
    "EquilibriumTriple",
    "ModelParams",
    "ParticleSystem",
    "PathEnsemble",
    "PicardConfig",
    "SelectionReport",
    "SmoothedTerminal",
    "TerminalCondition",
    "TimeGrid",
    "ViscousField",
    "build_coefficients",
    "canonical_table",
    "cost_closed_form",
    "cost_monte_carlo",
    "cost_report",
    "equilibrium_path",
    "make_grid",
    "nplayer_selection_stats",
    "quadrature_oracle",
    "selection_stats",
    "simulate_aggregate",
    "simulate_ensemble",
    "simulate_exact_picard",
    "simulate_mu",
    "solve_riccati",
    "table_for",
    "transition_point",
    "__version__",
]
