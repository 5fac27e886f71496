import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfg_select.fields import (
    EntropyField,
    SmoothedTerminal,
    TerminalCondition,
    admissible_parameters,
    equilibrium_path,
    g_eval,
    g_tilde_eval,
)

finite = st.floats(-5.0, 5.0, allow_nan=False)


def test_terminal_shape(table):
    r = table.r_delta
    g = TerminalCondition(r)
    assert g(0.0) == 0.0
    assert g(r) == pytest.approx(-1.0)
    assert g(-2 * r) == 1.0
    assert g(0.5 * r) == pytest.approx(-0.5)
    assert g.lipschitz == pytest.approx(1 / r)


@settings(max_examples=200)
@given(x=finite)
def test_terminal_is_odd_and_bounded(x):
    r = 0.3160602794142788
    g = TerminalCondition(r)
    assert g(-x) == -g(x)
    assert abs(g(x)) <= 1.0


@settings(max_examples=200)
@given(x=finite, y=finite)
def test_terminal_is_non_increasing(x, y):
    g = TerminalCondition(0.3)
    lo, hi = min(x, y), max(x, y)
    assert g(hi) <= g(lo)


@settings(max_examples=200)
@given(x=finite)
def test_smoothed_terminal_dominates(x):
    r, gamma = 0.3160602794142788, 0.05
    assert g_tilde_eval(x, gamma, r) >= g_eval(x, r) - 1e-15
    assert abs(g_tilde_eval(x, gamma, r)) <= 1.0


def test_smoothed_terminal_gap_integral(table):
    from scipy.integrate import quad
    r, gamma = table.r_delta, 0.05
    gt = SmoothedTerminal(r, gamma)
    g = TerminalCondition(r)
    val = quad(lambda x: gt(x) - g(x), -1, 1, points=[-r, r - 2 * gamma, r - gamma, r + gamma],
               epsabs=1e-14)[0]
    assert val == pytest.approx(gt.gap_integral(), rel=1e-10)
    assert gt.gap_integral() == pytest.approx(2 * gamma ** 2 / r)


def test_antiderivatives_match_quadrature(table):
    # H(y) = -int_0^y g
    from scipy.integrate import quad
    r = table.r_delta
    for term in (TerminalCondition(r), SmoothedTerminal(r, 0.07)):
        for y in (-1.3, -0.2, 0.0, 0.15, 0.9):
            pts = [p for p in (-r, r - 0.14, r - 0.07, r, r + 0.07) if min(0, y) < p < max(0, y)]
            ref = quad(term, 0.0, y, points=pts or None, epsabs=1e-14)[0]
            assert float(term.antiderivative(y)) == pytest.approx(-ref, abs=1e-13)


def test_smoothing_width_validated(table):
    with pytest.raises(ValueError):
        SmoothedTerminal(table.r_delta, 0.0)
    with pytest.raises(ValueError):
        SmoothedTerminal(table.r_delta, table.r_delta)


def test_entropy_field_before_and_after_kink(table):
    ent = EntropyField(table)
    assert ent(0.2, 0.3) == -1.0
    assert ent(0.2, -1e-9) == 1.0
    assert ent(0.2, 0.0) == 0.0
    t = 0.8
    width = table.r_delta - float(table.r_at(t))
    assert ent(t, 0.5 * width) == pytest.approx(-0.5)
    assert ent(t, 2 * width) == -1.0


@settings(max_examples=100, deadline=None)
@given(t=st.floats(0.0, 1.0), x=finite)
def test_entropy_field_odd_and_bounded(table, t, x):
    ent = EntropyField(table)
    assert ent(t, -x) == -ent(t, x)
    assert abs(ent(t, x)) <= 1.0


def test_three_equilibria_at_zero_start(table):
    g = TerminalCondition(table.r_delta)
    for A in (-1.0, 0.0, 1.0):
        eq = equilibrium_path(A, 0.0, table)
        assert eq.mu[-1] == pytest.approx(-A * table.k_T)
        assert abs(g(eq.mu[-1]) - A) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(frac=st.floats(-0.95, 0.95))
def test_shifted_start_family(table, frac):
    xi = frac * table.k_delta
    g = TerminalCondition(table.r_delta)
    params = admissible_parameters(xi, table)
    assert params[1] == pytest.approx(xi / table.k_delta)
    for A in params:
        eq = equilibrium_path(A, xi, table)
        assert abs(g(eq.mu[-1]) - A) <= 1e-9


def test_non_equilibrium_parameter_rejected(table):
    with pytest.raises(ValueError):
        equilibrium_path(0.5, 0.0, table)
    with pytest.raises(ValueError):
        admissible_parameters(table.k_delta, table)
