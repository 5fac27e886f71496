import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfg_select.mfg_sim import simulate_ensemble
from mfg_select.nplayer import (
    FeatureField,
    PicardConfig,
    aggregate_ensemble,
    aggregate_normals,
    brownian_increments,
    comparison_slack,
    ell_N,
    exact_runs,
    exchangeable_sum,
    gamma_N,
    leave_one_out_mean,
    loo_distance_check,
    nplayer_selection_stats,
    picard_first_pass,
    simulate_aggregate,
    simulate_exact_picard,
    sup_gap_vs_aggregate,
)

N_SMALL = 4
QUICK = PicardConfig(max_iterations=6, rows_target=64)


@pytest.fixture(scope="module")
def feature(table):
    return FeatureField(table, 1.0 / math.sqrt(N_SMALL), n_x=601)


@pytest.fixture(scope="module")
def increments(table):
    return np.random.default_rng(1).standard_normal((16, N_SMALL, table.grid.n_steps))


@pytest.fixture(scope="module")
def system(table, feature, increments):
    return simulate_exact_picard(N_SMALL, table, 0, QUICK, increments=increments, feature=feature)


def test_rates():
    assert gamma_N(16) == 0.5
    assert ell_N(math.e) == 1.0
    assert gamma_N(10_000) * math.sqrt(10_000) > gamma_N(100) * math.sqrt(100)


@settings(max_examples=100)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40), st.randoms())
def test_exchangeable_sum_invariances(values, rnd):
    a = np.array(values)
    perm = a.copy()
    rnd.shuffle(perm)
    assert exchangeable_sum(perm) == exchangeable_sum(a)
    assert exchangeable_sum(-a) == -exchangeable_sum(a)


def test_increments_deterministic(table):
    a = brownian_increments(3, 2, 5, table.grid.n_steps)
    assert a.shape == (5, table.grid.n_steps)
    assert np.array_equal(a, brownian_increments(3, 2, 5, table.grid.n_steps))
    assert not np.array_equal(a, brownian_increments(3, 3, 5, table.grid.n_steps))


def test_field_floor_rejects_large_population(table):
    with pytest.raises(ValueError, match="at most 2500"):
        simulate_aggregate(2501, table, seed=0)
    simulate_aggregate(2500, table, seed=0)


def test_aggregate_matches_mean_field_path(table):
    agg = simulate_aggregate(400, table, seed=8, run_id=1)
    ens = simulate_ensemble(0.05, table, 1, seed=8, normals=agg.B_increments[None])
    assert np.array_equal(agg.mu_hat, ens.values[0])


def test_aggregate_ensemble_matches_single_runs(table):
    mu = aggregate_ensemble(16, table, 3, seed=2)
    for j in range(3):
        assert np.array_equal(mu[j], simulate_aggregate(16, table, seed=2, run_id=j).mu_hat)
    assert np.array_equal(aggregate_ensemble(16, table, 3, seed=2, threads=2), mu)


def test_aggregate_sign_flip(table):
    inc = brownian_increments(4, 0, 9, table.grid.n_steps)
    a = simulate_aggregate(9, table, 4, increments=inc)
    b = simulate_aggregate(9, table, 4, increments=-inc)
    assert np.array_equal(a.mu_hat, -b.mu_hat)
    assert aggregate_normals(inc[::-1]).tolist() == aggregate_normals(inc).tolist()


def test_exact_system_shapes_and_clamp(system, table):
    n = table.grid.n_steps
    assert system.x_tilde.shape == (n + 1, N_SMALL)
    assert system.v_tilde.shape == (n + 1, N_SMALL)
    assert np.all(np.abs(system.v_tilde) <= 1.0)
    assert np.allclose(system.X, system.w[:, None] * system.x_tilde)
    assert len(system.delta_history) == system.iterations


def test_exact_sign_flip(system, table, feature, increments):
    flipped = simulate_exact_picard(N_SMALL, table, 0, QUICK, increments=-increments, feature=feature)
    assert np.array_equal(flipped.x_tilde, -system.x_tilde)
    assert np.array_equal(flipped.v_tilde, -system.v_tilde)
    assert np.array_equal(flipped.mu_tilde, -system.mu_tilde)


def test_exact_permutation(system, table, feature, increments):
    perm = [2, 0, 3, 1]
    out = simulate_exact_picard(N_SMALL, table, 0, QUICK, increments=increments[:, perm], feature=feature)
    assert np.array_equal(out.x_tilde, system.x_tilde[:, perm])
    assert np.array_equal(out.v_tilde, system.v_tilde[:, perm])


def test_leave_one_out(system, table):
    row = system.x_tilde[-1]
    j = 2
    assert leave_one_out_mean(system, j, -1) == pytest.approx(np.delete(row, j).mean(), abs=1e-15)
    distance, bound = loo_distance_check(system, table)
    assert distance <= bound


def test_leave_one_out_examples(table):
    from mfg_select.nplayer import ParticleSystem
    n = table.grid.n_steps
    x = np.full((n + 1, 3), 0.7)
    sys_ = ParticleSystem(3, table.grid, x, np.zeros_like(x), np.zeros((3, n)), 0, 0, 0, True,
                          False, w=np.asarray(table.w))
    assert leave_one_out_mean(sys_, 1, 5) == pytest.approx(0.7)
    x2 = np.tile([0.3, -0.9], (n + 1, 1))
    sys2 = ParticleSystem(2, table.grid, x2, np.zeros_like(x2), np.zeros((2, n)), 0, 0, 0, True,
                          False, w=np.asarray(table.w))
    assert leave_one_out_mean(sys2, 0, 0) == pytest.approx(-0.9, abs=1e-15)


def test_diagnostics_are_finite(system, table):
    assert np.isfinite(sup_gap_vs_aggregate(system, table))
    assert comparison_slack(system, table) >= 0.0


def test_first_pass(table):
    x, y = picard_first_pass(N_SMALL, table, seed=1)
    assert x.shape == (table.grid.n_steps + 1, N_SMALL)
    assert np.all(np.abs(y) <= 1.0)


def test_replica_zero_uses_aggregate_stream(table, feature):
    cfg = PicardConfig(max_iterations=2, rows_target=8)
    out = simulate_exact_picard(N_SMALL, table, 6, cfg, run_id=3, feature=feature)
    assert np.array_equal(out.increments, brownian_increments(6, 3, N_SMALL, table.grid.n_steps))


@pytest.mark.parametrize("kwargs", [
    dict(max_iterations=0), dict(damping=0.0), dict(degree=2), dict(tolerance=0.0),
    dict(init="random"), dict(field_feature=False),
])
def test_picard_config_validation(kwargs):
    with pytest.raises(ValueError):
        PicardConfig(**kwargs)


def test_population_limits(table):
    with pytest.raises(ValueError):
        simulate_exact_picard(1, table, 0)
    with pytest.raises(ValueError):
        simulate_exact_picard(300, table, 0)


def test_wrong_feature_rejected(table):
    other = FeatureField(table, 0.25, n_x=11)
    with pytest.raises(ValueError):
        simulate_exact_picard(N_SMALL, table, 0, QUICK, feature=other)


def test_exact_runs_summary(table):
    runs = exact_runs(N_SMALL, 2, 0.15, seed=0, table=table,
                      config=PicardConfig(max_iterations=15, rows_target=256))
    assert [r.run_id for r in runs] == [0, 1]
    for r in runs:
        assert r.label in (-1, 0, 1)
        assert r.picard_iters >= 1
        assert r.sup_gap_vs_aggregate < 0.2


def test_selection_stats_counts(table):
    rep = nplayer_selection_stats(16, 20, 0.15, seed=1, table=table)
    assert rep.total == 20
    assert rep.n_plus + rep.n_minus + rep.n_unclassified == 20
