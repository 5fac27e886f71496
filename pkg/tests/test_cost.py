import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfg_select.cost import (
    a_squared_bracket,
    a_squared_integrand,
    cost_closed_form,
    cost_gap_trapezoid,
    cost_monte_carlo,
    cost_report,
    mean_variance_at_equilibrium,
)


def test_symmetric_and_minimal_at_zero(table):
    rep = cost_report(table.params, table)
    assert rep.J_plus == rep.J_minus
    assert rep.J_zero < rep.J_plus
    assert rep.minimal_at_zero


def test_gap_cross_checked_by_trapezoid(table):
    gap = cost_closed_form(1.0, table.params, table) - cost_closed_form(0.0, table.params, table)
    assert gap == pytest.approx(cost_gap_trapezoid(table), rel=1e-6)


def test_integrand_positive(table):
    assert np.all(a_squared_integrand(table) > 0)
    assert a_squared_bracket(table) > 0


@settings(max_examples=30, deadline=None)
@given(A=st.floats(-3.0, 3.0))
def test_quadratic_in_A(table, A):
    base = cost_closed_form(0.0, table.params, table)
    unit = cost_closed_form(1.0, table.params, table) - base
    assert cost_closed_form(A, table.params, table) - base == pytest.approx(A * A * unit, rel=1e-12, abs=1e-14)


def test_unknown_rule(table):
    with pytest.raises(ValueError):
        cost_closed_form(1.0, table.params, table, rule="midpoint")


def test_mean_and_variance(table):
    m, v = mean_variance_at_equilibrium(1.0, 1.0, table)
    assert m == pytest.approx(-table.k_T)
    assert v == pytest.approx(table.k_T)
    assert mean_variance_at_equilibrium(0.0, 0.4, table)[0] == 0.0
    assert mean_variance_at_equilibrium(1.0, 0.0, table)[1] == 0.0
    with pytest.raises(ValueError):
        mean_variance_at_equilibrium(1.0, 0.0005, table)


@pytest.fixture(scope="module")
def mc(table):
    return {A: cost_monte_carlo(A, 20_000, 9, table.params, table) for A in (-1.0, 0.0, 1.0)}


def test_monte_carlo_agrees_with_closed_form(table, mc):
    for A, res in mc.items():
        assert abs(res.estimate - cost_closed_form(A, table.params, table)) <= 3 * res.standard_error


def test_monte_carlo_moments(table, mc):
    res = mc[1.0]
    for t in (0.25, 0.5, 1.0):
        j = table.grid.index_of(t)
        m, v = mean_variance_at_equilibrium(1.0, t, table)
        assert abs(res.mean_path[j] - m) <= 3 * np.sqrt(v / res.n_paths)
        assert res.var_path[j] == pytest.approx(v, rel=0.05)


def test_monte_carlo_symmetric_in_law(mc):
    a, b = mc[1.0], mc[-1.0]
    assert abs(a.estimate - b.estimate) <= 3 * np.hypot(a.standard_error, b.standard_error)


def test_monte_carlo_thread_independent(table):
    one = cost_monte_carlo(0.0, 12_000, 4, table.params, table, threads=1)
    three = cost_monte_carlo(0.0, 12_000, 4, table.params, table, threads=3)
    assert one.estimate == three.estimate
    with pytest.raises(ValueError):
        cost_monte_carlo(0.0, 50, 4, table.params, table)
