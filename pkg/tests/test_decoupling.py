import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfg_select.decoupling import (
    SIGMA0_FLOOR,
    ViscousField,
    cole_hopf_eval,
    l1_comparison,
    max_gradient,
    pde_residual,
    psi,
    psi_bound,
    psi_report,
    quadrature_oracle,
    tabulate,
)
from mfg_select.fields import EntropyField, SmoothedTerminal, TerminalCondition


@pytest.fixture(scope="module")
def fields(table):
    return {s: ViscousField(table, s) for s in (0.5, 0.2, 0.1, 0.05, 0.02)}


def oracle(t, x, s0, table, terminal=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return quadrature_oracle(t, x, s0, table, terminal)


@pytest.mark.parametrize("s0", [0.5, 0.2, 0.1, 0.05, 0.02])
@pytest.mark.parametrize("t,x", [(0.0, 0.0), (0.1, 0.03), (0.3, -0.4), (0.5, 0.01),
                                 (0.75, 0.2), (0.95, -0.05), (0.6, 1.7)])
def test_matches_quadrature(fields, table, s0, t, x):
    assert fields[s0](t, x) == pytest.approx(oracle(t, x, s0, table), abs=1e-9)


def test_smoothed_terminal_matches_quadrature(table):
    term = SmoothedTerminal(table.r_delta, 0.05)
    f = ViscousField(table, 0.1, terminal=term)
    for t, x in [(0.2, 0.1), (0.7, 0.3), (0.9, -0.2)]:
        assert f(t, x) == pytest.approx(oracle(t, x, 0.1, table, term), abs=1e-9)


def test_terminal_time_returns_data(fields, table):
    xs = np.linspace(-1, 1, 41)
    g = TerminalCondition(table.r_delta)
    assert np.array_equal(fields[0.1](table.horizon, xs), g(xs))


def test_broadcasting(fields):
    ts = np.array([0.1, 0.5, 0.9])[:, None]
    xs = np.linspace(-0.5, 0.5, 7)[None, :]
    grid = fields[0.2](ts, xs)
    assert grid.shape == (3, 7)
    assert grid[1, 3] == fields[0.2](0.5, 0.0)
    assert isinstance(fields[0.2](0.3, 0.2), float)


def test_scalar_helper(table, fields):
    assert cole_hopf_eval(0.3, 0.1, 0.2, table) == fields[0.2](0.3, 0.1)


@settings(max_examples=150, deadline=None)
@given(t=st.floats(0.0, 1.0), x=st.floats(-3.0, 3.0),
       s0=st.sampled_from([0.5, 0.2, 0.1, 0.05, 0.02]))
def test_odd_and_bounded(fields, t, x, s0):
    f = fields[s0]
    v = f(t, x)
    assert f(t, -x) == -v
    assert abs(v) <= 1.0


@settings(max_examples=100, deadline=None)
@given(t=st.floats(0.0, 1.0), x=st.floats(-3.0, 3.0), h=st.floats(1e-6, 1.0),
       s0=st.sampled_from([0.5, 0.2, 0.1, 0.05]))
def test_non_increasing_in_x(fields, t, x, h, s0):
    f = fields[s0]
    assert f(t, x + h) <= f(t, x) + 1e-12


def test_noise_floor_and_validation(table):
    with pytest.raises(ValueError):
        ViscousField(table, 0.0)
    with pytest.raises(ValueError):
        ViscousField(table, 0.5 * SIGMA0_FLOOR)


def test_converges_to_entropy_field(table, fields):
    ent = EntropyField(table)
    t, x = 0.3, 0.1
    gaps = [abs(fields[s](t, x) - ent(t, x)) for s in (0.2, 0.1, 0.05)]
    assert gaps[0] > gaps[1] > gaps[2]


@pytest.mark.parametrize("s0", [0.2, 0.1, 0.05])
def test_psi_within_bound(table, s0):
    for t in (0.0, 0.2, 0.4):
        width = float(table.r_at(t)) - table.r_delta
        for frac in (0.1, 0.5, 0.9):
            rep = psi_report(t, frac * width, s0, table)
            assert rep.holds
            assert rep.psi_abs == abs(psi(t, frac * width, s0, table))


def test_psi_bound_domain(table):
    with pytest.raises(ValueError):
        psi_bound(0.8, 0.01, 0.1, table)
    with pytest.raises(ValueError):
        psi_bound(0.2, 0.0, 0.1, table)
    with pytest.raises(ValueError):
        psi_bound(0.2, 1.0, 0.1, table)


def test_pde_residual_second_order(table):
    res = [abs(pde_residual(0.25, 0.1, 0.2, h, h, table)) for h in (0.02, 0.01, 0.005)]
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.1)
    assert res[1] / res[2] == pytest.approx(4.0, rel=0.1)
    with pytest.raises(ValueError):
        pde_residual(0.001, 0.1, 0.2, 0.01, 0.01, table)


@pytest.mark.parametrize("t", [0.0, 0.5, 0.9])
def test_l1_comparison(table, t):
    gap, lo = l1_comparison(t, 0.1, 0.05, table)
    assert lo >= -1e-9
    assert gap <= 2 * 0.05 ** 2 / table.r_delta + 1e-6


def test_gradient_grows_like_inverse_variance(table):
    grads = [max_gradient(table.delta, s, table) for s in (0.4, 0.2, 0.1)]
    assert grads[0] < grads[1] < grads[2]
    assert all(g * s * s <= 1.0 for g, s in zip(grads, (0.4, 0.2, 0.1)))


def test_tabulate(tmp_path, table):
    path = tmp_path / "lattice.csv"
    tabulate(table, 0.1, [0.2, 0.8], np.linspace(-0.5, 0.5, 5), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,theta_sigma,theta,psi,bound"
    assert len(lines) == 11
    # bound only where it is defined
    row = dict(zip(lines[0].split(","), lines[-1].split(",")))
    assert row["bound"] == ""
