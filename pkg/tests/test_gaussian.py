import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatdim import gaussian as gf
from heatdim import kernel as hk
from heatdim import rng as rngmod
from heatdim.errors import DegenerateGramWarning
from heatdim.torus import SpaceTimePoint, greedy_order


def test_streams_deterministic_and_distinct():
    a = rngmod.stream(7, rngmod.ROLE_FIELD, 3).standard_normal(5)
    b = rngmod.stream(7, rngmod.ROLE_FIELD, 3).standard_normal(5)
    c = rngmod.stream(7, rngmod.ROLE_FIELD, 4).standard_normal(5)
    d = rngmod.stream(7, rngmod.ROLE_SOLVER, 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_stream_rejects_bad_seed():
    with pytest.raises(ValueError):
        rngmod.stream(-1)


def test_evolve_composition_variances():
    n = 16
    a, b = 0.013, 0.4
    decay_b = gf.mode_decay(n, b)
    composed = decay_b**2 * gf.mode_step_variance(n, a) + gf.mode_step_variance(n, b)
    np.testing.assert_allclose(composed, gf.mode_step_variance(n, a + b), rtol=1e-12, atol=1e-15)


def test_evolve_requires_positive_dt():
    with pytest.raises(ValueError):
        gf.evolve(gf.SpectralState.zero(4, 1), 0.0)


def test_render_zero_and_single_cosine():
    x = np.linspace(-1, 1, 9, endpoint=False)
    st_ = gf.SpectralState(4, 1)
    np.testing.assert_array_equal(gf.render(st_, x), 0.0)
    st_.cos_coeffs[0, 1] = 1.0
    np.testing.assert_allclose(gf.render(st_, x)[:, 0], np.cos(np.pi * x), atol=1e-14)


@given(st.integers(1, 40), st.sampled_from([8, 16, 64]), st.integers(0, 2**32))
def test_render_uniform_matches_direct(n_modes, J, seed):
    g = np.random.default_rng(seed)
    cos = g.standard_normal((2, n_modes + 1))
    sin = g.standard_normal((2, n_modes))
    fast = gf.render_uniform(cos, sin, J)
    slow = gf.render_points(cos, sin, gf.uniform_sites(J))
    np.testing.assert_allclose(fast, slow, atol=1e-11 * (1 + np.abs(slow).max()))


def test_n_modes_zero_is_brownian_over_sqrt2():
    vals = gf.sample_ensemble([1.0], [0.0, 0.5], 1, 0, seed=1, n_replicas=20000)
    assert np.allclose(vals[:, 0, 0], vals[:, 0, 1])
    var = vals[:, 0, 0, 0].var()
    assert abs(var - 0.5) < 5 * 0.5 * math.sqrt(2 / 20000)
    assert hk.variance_of_H(1.0, n_modes=0) == pytest.approx(0.5)


def test_sample_grid_reproducible_and_zero_at_start():
    a = gf.sample_grid([0.0, 0.3], [0.0, 0.5], 2, 8, seed=3)
    b = gf.sample_grid([0.0, 0.3], [0.0, 0.5], 2, 8, seed=3)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.values[0], 0.0)
    assert a.p == 2


def test_sample_ensemble_matches_sample_grid():
    ens = gf.sample_ensemble([0.2, 0.5], [0.0, 0.25, -0.6], 2, 12, seed=9, n_replicas=5, first_replica=2, batch=2)
    for r in range(5):
        single = gf.sample_grid([0.2, 0.5], [0.0, 0.25, -0.6], 2, 12, seed=9, replica=r + 2)
        np.testing.assert_array_equal(ens[r], single.values)


def test_time_series_law_matches_covariance():
    times = np.linspace(0.1, 0.4, 4)
    n, R = 8, 4000
    ts = np.stack([gf.sample_time_series(times, 0.3, 1, n, seed=4, replica=r)[:, 0] for r in range(R)])
    emp = ts.T @ ts / R
    exact = hk.covariance_of_H(times[:, None], 0.0, times[None, :], 0.0, n_modes=n)
    se = np.sqrt((exact**2 + np.outer(np.diag(exact), np.diag(exact))) / R)
    assert np.all(np.abs(emp - exact) < 5 * se)


def test_time_series_deterministic():
    times = np.linspace(0.1, 0.4, 50)
    np.testing.assert_array_equal(gf.sample_time_series(times, 0.0, 2, 16, seed=1),
                                  gf.sample_time_series(times, 0.0, 2, 16, seed=1))
    with pytest.raises(ValueError):
        gf.sample_time_series([0.1, 0.2, 0.4], 0.0, 1, 4, seed=0)


def test_sample_rejects_unsorted_times():
    with pytest.raises(ValueError):
        gf.sample_grid([0.5, 0.1], [0.0], 1, 4)


def test_field_sample_shape_check():
    with pytest.raises(ValueError):
        gf.FieldSample(np.array([0.1]), np.array([0.0, 0.5]), np.zeros((1, 3, 1)), 0, 4)


def test_variance_at_t1_and_stationarity():
    n = 8
    sites = np.linspace(-1, 1, 5, endpoint=False)
    vals = gf.sample_ensemble([1.0], sites, 1, n, seed=11, n_replicas=20000)[:, 0, :, 0]
    target = hk.variance_of_H(1.0, n_modes=n)
    se = target * math.sqrt(2 / vals.shape[0])
    assert np.all(np.abs(vals.var(axis=0) - target) < 5 * se)


def test_coordinates_independent():
    R = 20000
    vals = gf.sample_ensemble([0.5], [0.0, 0.4], 3, 16, seed=5, n_replicas=R)[:, 0]
    for s in range(2):
        c = np.corrcoef(vals[:, s].T)
        off = c[np.triu_indices(3, 1)]
        assert np.all(np.abs(off) <= 4 / math.sqrt(R))


def test_spatial_increment_law_matches_energy():
    n = 24
    t, x, z = 0.4, 0.1, -0.35
    cov = 2 * hk.variance_of_H(t, n_modes=n) - 2 * hk.covariance_of_H(t, x, t, z, n_modes=n)
    assert cov == pytest.approx(hk.spatial_increment_energy(t, x, z, n_modes=n), abs=1e-10)


def test_conditional_variance_examples():
    tgt = SpaceTimePoint(0.5, 0.1)
    assert gf.conditional_variance(gf.ConditioningProblem(tgt)) == pytest.approx(hk.variance_of_H(0.5))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateGramWarning)
        assert gf.conditional_variance(gf.ConditioningProblem(tgt, [tgt])) == pytest.approx(0.0, abs=1e-10)


def test_degenerate_gram_warns():
    pts = [SpaceTimePoint(0.5, 0.1), SpaceTimePoint(0.5, 0.1)]
    with pytest.warns(DegenerateGramWarning):
        res = gf.conditional_variance(gf.ConditioningProblem(SpaceTimePoint(0.6, 0.0), pts), full_output=True)
    assert res.degenerate


@given(st.lists(st.tuples(st.floats(0.1, 1.0), st.floats(-1, 0.99)), min_size=1, max_size=6),
       st.floats(0.1, 1.0), st.floats(-1, 0.99), st.randoms(use_true_random=False))
def test_conditional_variance_permutation_and_monotone(conds, t, x, rnd):
    ts = np.array([c[0] for c in conds])
    xs = np.array([c[1] for c in conds])
    base = gf.conditional_variance_arrays(t, x, ts, xs).value
    perm = list(range(ts.size))
    rnd.shuffle(perm)
    assert gf.conditional_variance_arrays(t, x, ts[perm], xs[perm]).value == pytest.approx(base, abs=1e-12)
    fewer = gf.conditional_variance_arrays(t, x, ts[:-1], xs[:-1]).value
    assert base <= fewer + 1e-12


def test_conditional_variance_minimizes_quadratic_form():
    # brute force over a coefficient grid for two conditioners
    t, x = 0.6, 0.0
    ts, xs = np.array([0.5, 0.6]), np.array([0.05, 0.3])
    pts_t = np.concatenate([[t], ts])
    pts_x = np.concatenate([[x], xs])
    K = hk.covariance_of_H(pts_t[:, None], pts_x[:, None], pts_t[None, :], pts_x[None, :])
    sol = np.linalg.solve(K[1:, 1:], K[1:, 0])
    a = np.linspace(-0.5, 0.5, 401)
    a1, a2 = np.meshgrid(sol[0] + a * 1e-2, sol[1] + a * 1e-2, indexing="ij")
    vec = np.stack([np.ones_like(a1), -a1, -a2], axis=-1)
    q = np.einsum("...i,ij,...j->...", vec, K, vec)
    assert gf.conditional_variance_arrays(t, x, ts, xs).value == pytest.approx(q.min(), abs=1e-6)


def test_slnd_scan_bounds_and_skip():
    rep = gf.slnd_ratio_scan(1.0, 4, 30, seed=2, n_modes=64)
    assert rep.ratios.size + rep.n_skipped == 30
    assert 0.01 < rep.min_ratio and rep.max_ratio < 10
    zero = rep.ratios[rep.m == 0]
    assert np.all((zero >= 0.3) & (zero <= 1.2))


def test_slnd_distance():
    assert gf.slnd_distance(0.25, 0.0, [], []) == 0.5
    assert gf.slnd_distance(0.25, 0.0, [0.25], [0.01]) == pytest.approx(0.01)


def test_small_ball_single_point():
    rep = gf.small_ball_product_check([0.5], [0.0], 0.1, n_mc=50_000, seed=1)
    exact = gf.exact_small_ball_single(0.5, 0.1)
    assert exact <= rep.bound
    assert abs(rep.probability - exact) < 4 * rep.std_error
    assert rep.passed


def test_small_ball_far_points_near_product():
    t, x = np.array([0.01, 0.01]), np.array([0.0, 0.9])
    rep = gf.small_ball_product_check(t, x, 0.1, n_mc=100_000, seed=3)
    marg = gf.exact_small_ball_single(0.01, 0.1) ** 2
    assert abs(rep.probability - marg) < 5 * rep.std_error + 0.01


def test_small_ball_large_eps():
    rep = gf.small_ball_product_check([0.3, 0.6], [0.0, 0.2], 100.0, n_mc=10_000, seed=0)
    assert rep.probability == 1.0 and rep.bound >= 1.0 and rep.passed


def test_small_ball_random_greedy_configs():
    g = np.random.default_rng(8)
    for _ in range(5):
        n = int(g.integers(2, 7))
        t, x = g.uniform(0.1, 1, n), g.uniform(-1, 1, n)
        perm = greedy_order(t, x)
        rep = gf.small_ball_product_check(t[perm], x[perm], 0.1, n_mc=40_000, seed=int(g.integers(1 << 30)))
        assert rep.passed


def test_small_ball_requires_greedy_order():
    with pytest.raises(ValueError):
        gf.small_ball_product_check([0.5, 0.5, 0.5], [0.0, 0.9, 0.05], 0.1, n_mc=10)
