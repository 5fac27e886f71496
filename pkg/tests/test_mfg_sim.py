import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfg_select.decoupling import ViscousField
from mfg_select.fields import EntropyField
from mfg_select.mfg_sim import (
    c_delta,
    classify,
    drift_envelope_excess,
    escape_fraction,
    euler_maruyama,
    hitting_bound,
    hitting_probabilities,
    path_normals,
    report_from_labels,
    selection_stats,
    simulate_ensemble,
    simulate_mu,
    tau_epsilon,
    tau_gamma_escape,
    transition_point,
)


@pytest.fixture(scope="module")
def small(table):
    return simulate_ensemble(0.1, table, 40, seed=5)


def test_shapes_and_start(small, table):
    assert small.values.shape == (40, table.grid.n_steps + 1)
    assert np.all(small.values[:, 0] == 0.0)
    assert len(small) == 40
    assert small.path(3).path_id == 3


def test_single_path_matches_ensemble(small, table):
    path = simulate_mu(0.1, table, seed=5, path_id=7)
    assert np.array_equal(path.values, small.values[7])


def test_determinism_and_thread_independence(small, table):
    again = simulate_ensemble(0.1, table, 40, seed=5, threads=3)
    assert np.array_equal(again.values, small.values)
    other = simulate_ensemble(0.1, table, 40, seed=6)
    assert not np.array_equal(other.values, small.values)


def test_sign_flip_equivariance(small, table):
    flipped = simulate_ensemble(0.1, table, 40, seed=5, normals=-small.normals)
    assert np.array_equal(flipped.values, -small.values)


def test_zero_noise_with_entropy_field_stays_at_origin(table):
    vals = euler_maruyama(table, EntropyField(table), 0.0, np.zeros((1, table.grid.n_steps)))
    assert np.all(vals == 0.0)


def test_drift_envelope(small):
    assert drift_envelope_excess(small) <= 1e-12


def test_noise_integral_recomputed(small, table):
    ni = small.noise_integral()
    dt = table.grid.step
    manual = 0.1 * math.sqrt(dt) * np.cumsum(small.normals[0] / table.w[:-1])
    assert np.allclose(ni[0, 1:], manual, atol=1e-13)


def test_wrong_increment_count(table):
    with pytest.raises(ValueError):
        euler_maruyama(table, ViscousField(table, 0.2), 0.2, np.zeros((2, 10)))


def test_non_finite_state_detected(table):
    bad = lambda t, x: np.full_like(x, np.nan)
    with pytest.raises(FloatingPointError):
        euler_maruyama(table, bad, 0.1, np.zeros((1, table.grid.n_steps)))


def test_transition_point_definition():
    tp = transition_point(0.05)
    L = abs(math.log(0.05)) ** (1 / 9)
    assert tp.L == pytest.approx(L)
    assert tp.epsilon0 == pytest.approx(0.05 ** 2 * L ** 2)
    assert tp.floor == pytest.approx(0.05 ** 2 * L)
    assert tp.epsilon0 > tp.floor
    with pytest.raises(ValueError):
        transition_point(1.0)


def test_tau_epsilon_never_hit_is_horizon(table):
    vals = np.zeros(table.grid.n_steps + 1)
    assert tau_epsilon(vals, table.grid, 0.01) == table.horizon
    vals[10:] = 0.02
    assert tau_epsilon(vals, table.grid, 0.01) == pytest.approx(table.nodes[10])


def test_escape_on_explicit_equilibrium(table):
    tp = transition_point(0.05)
    gamma = 0.5 * c_delta(table)
    up = -(-np.asarray(table.k))  # the +k equilibrium mean
    assert tau_gamma_escape(up, table, gamma, tp, 1) == table.horizon
    frac, n = escape_fraction(np.stack([up, -up]), table, gamma, tp)
    assert (frac, n) == (0.0, 2)
    with pytest.raises(ValueError):
        tau_gamma_escape(up, table, c_delta(table), tp)


def test_classify_rays(table):
    k = np.asarray(table.k)
    rays = np.stack([k, -k, np.zeros_like(k), k + 0.1, -k - 0.2])
    assert list(classify(rays, table, 0.15)) == [1, -1, 0, 1, 0]
    with pytest.raises(ValueError):
        classify(rays, table, 0.0)


def test_deterministic_rays_split_evenly(table):
    k = np.asarray(table.k)
    rep = selection_stats(np.stack([k, -k] * 5), 0.15, table)
    assert (rep.frac_plus, rep.frac_minus, rep.frac_unclassified) == (0.5, 0.5, 0.0)
    assert rep.total == 10


def test_report_counts():
    rep = report_from_labels(np.array([1, 1, -1, 0]), 0.1, np.array([0.1, 0.2, 0.3]))
    assert (rep.n_plus, rep.n_minus, rep.n_unclassified) == (2, 1, 1)
    assert rep.se_plus == pytest.approx(math.sqrt(0.25 / 4))
    assert len(rep.hitting_time_quantiles) == 3
    assert rep.as_dict()["n_plus"] == 2


@settings(max_examples=40)
@given(a=st.floats(1.0, 4.0), clock=st.floats(0.1, 2.0))
def test_hitting_bound_positive_and_decreasing_in_level(a, clock):
    b = hitting_bound(a, clock)
    assert 0 < b < 1
    assert hitting_bound(a + 0.5, clock) < b


def test_hitting_probabilities_respect_bound(table):
    checks = hitting_probabilities([1.0, 1.5, 2.0], table.k_delta, 4000, seed=3, n_steps=200)
    assert all(c.passed for c in checks)
    est = [c.estimate for c in checks]
    assert est[0] >= est[1] >= est[2]
    with pytest.raises(ValueError):
        hitting_probabilities([0.5], 1.0, 10, seed=0)


def test_terminal_mean_symmetric(table):
    ens = simulate_ensemble(0.2, table, 400, seed=12)
    term = ens.values[:, -1]
    assert abs(term.mean()) <= 3 * term.std(ddof=1) / math.sqrt(term.size)


def test_hitting_unit_level_unit_clock():
    est = hitting_probabilities([1.0], 1.0, 100_000, seed=0)[0].estimate
    assert est > 0.01
