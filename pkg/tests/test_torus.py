import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatdim.errors import CapExceeded, DuplicatePoints
from heatdim.torus import (
    AnisotropicMetric,
    SpaceTimePoint,
    TorusPoint,
    check_greedy_order,
    greedy_order,
    lattice_spacing,
    parabolic_dist,
    parabolic_dist_arrays,
    product_lattice,
    spatial_lattice,
    torus_dist,
    wrap,
)

coord = st.floats(-5.0, 5.0, allow_nan=False)
unit = st.floats(-1.0, 1.0, allow_nan=False, exclude_max=True)
time = st.floats(0.0, 2.0, allow_nan=False)


@pytest.mark.parametrize("a, b, expected", [(0.0, 0.0, 0.0), (0.9, -0.9, 0.2), (-0.5, 0.25, 0.75)])
def test_torus_dist_examples(a, b, expected):
    assert torus_dist(a, b) == pytest.approx(expected, abs=1e-15)
    assert torus_dist(TorusPoint(a), TorusPoint(b)) == pytest.approx(expected, abs=1e-15)


def test_wrap_range_and_tiny_negative():
    assert wrap(1.0) == -1.0
    assert wrap(-1e-300) < 1.0
    x = wrap(np.linspace(-7, 7, 1001))
    assert np.all((x >= -1.0) & (x < 1.0))


def test_torus_point_arithmetic():
    p = TorusPoint(0.75) + 0.5
    assert p.coord == pytest.approx(-0.75)
    assert float(TorusPoint(-0.75) - 0.5) == pytest.approx(0.75)


@pytest.mark.parametrize("a, b, expected", [
    ((1, 0), (1, 0), 0.0),
    ((1, 0), (1.0001, 0), 0.1),
    ((0.5, 0.9), (0.5, -0.9), math.sqrt(0.2)),
])
def test_parabolic_dist_examples(a, b, expected):
    d = parabolic_dist(SpaceTimePoint(*a), SpaceTimePoint(*b))
    assert d == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        SpaceTimePoint(-0.1, 0.0)


@given(coord, coord, coord)
def test_torus_metric_axioms(a, b, c):
    dab = torus_dist(a, b)
    assert 0.0 <= dab <= 1.0
    assert dab == pytest.approx(torus_dist(b, a), abs=1e-15)
    assert torus_dist(a, c) <= dab + torus_dist(b, c) + 1e-15
    assert torus_dist(a, a) == 0.0


def test_torus_metric_axioms_bulk():
    g = np.random.default_rng(0)
    a, b, c = g.uniform(-1, 1, (3, 10_000))
    dab = torus_dist(a, b)
    assert np.all(dab >= 0)
    np.testing.assert_allclose(dab, torus_dist(b, a), rtol=0, atol=1e-15)
    assert np.all(torus_dist(a, c) <= dab + torus_dist(b, c) + 1e-15)


@given(time, unit, time, unit, time, unit)
def test_parabolic_triangle_inequality(t1, x1, t2, x2, t3, x3):
    d12 = parabolic_dist_arrays(t1, x1, t2, x2)
    d23 = parabolic_dist_arrays(t2, x2, t3, x3)
    d13 = parabolic_dist_arrays(t1, x1, t3, x3)
    assert d13 <= d12 + d23 + 1e-12
    assert d12 == pytest.approx(parabolic_dist_arrays(t2, x2, t1, x1), abs=1e-15)


@given(time, unit)
def test_parabolic_identity(t, x):
    assert parabolic_dist_arrays(t, x, t, x) == 0.0
    assert parabolic_dist_arrays(t, x, t + 1e-3, x) > 0.0


def test_spatial_lattice_examples():
    lat = spatial_lattice(1, 1.0, 0.5)
    assert lattice_spacing(1, 1.0, 0.5) == 2.0**-4
    assert lat.size == 32
    # n = 0 collapses to spacing 1; the 2^-1.5 spacing needs n = 1
    np.testing.assert_array_equal(spatial_lattice(0, 0.5, 1.0), [-1.0, 0.0])
    lat = spatial_lattice(1, 0.5, 1.0)
    s = 2.0**-1.5
    assert s in lat and -s in lat and 0.0 in lat
    assert np.all((lat >= -1) & (lat < 1))
    assert spatial_lattice(2, 0.5, 0.25).size == 8192


@pytest.mark.parametrize("n, delta, alpha", [(1, 1.0, 0.5), (2, 0.5, 0.25), (3, 0.0, 1.0), (2, 1.0, 0.5)])
def test_lattice_spacing_exact_in_binary(n, delta, alpha):
    lat = spatial_lattice(n, delta, alpha)
    expo = n * (1 + delta) / alpha
    assert expo == int(expo)
    assert np.all(np.diff(lat) == 2.0 ** -int(expo))
    assert lat.size == 2 * 2 ** int(expo)


def test_spatial_lattice_cap():
    with pytest.raises(CapExceeded):
        spatial_lattice(4, 0.5, 0.25, cap=1000)


def test_product_lattice_examples():
    pts = product_lattice(1, 0.0, AnisotropicMetric.parabolic(), [(0.0, 1.0), None])
    assert pts.shape == (17 * 8, 2)
    np.testing.assert_array_equal(product_lattice(0, 0.0, (1.0,), [(0.0, 1.0)])[:, 0], [0.0, 1.0])
    np.testing.assert_array_equal(product_lattice(1, 0.0, (1.0,), [(0.0, 1.0)])[:, 0], [0.0, 0.5, 1.0])
    assert product_lattice(1, 0.0, (1.0,), [(0.5, 0.5)]).shape == (1, 1)
    assert product_lattice(0, 0.0, (1.0,), [(0.3, 0.3)]).shape == (0, 1)
    with pytest.raises(CapExceeded):
        product_lattice(3, 0.0, AnisotropicMetric.parabolic(), [(0.0, 1.0), None], cap=100)


def test_anisotropic_metric_validation():
    with pytest.raises(ValueError):
        AnisotropicMetric((0.0, 0.5))
    m = AnisotropicMetric.parabolic()
    assert m.distance([0.0, 0.9], [1e-4, -0.9]) == pytest.approx(0.1 + math.sqrt(0.2))


def test_greedy_small_cases():
    np.testing.assert_array_equal(greedy_order([0.5], [0.0]), [0])
    perm = greedy_order([0.5, 0.6], [0.0, 0.1])
    assert sorted(perm) == [0, 1]
    pts = [SpaceTimePoint(0.5, 0.0), SpaceTimePoint(0.7, 0.2)]
    assert sorted(greedy_order(pts)) == [0, 1]


def test_greedy_duplicates():
    with pytest.raises(DuplicatePoints):
        greedy_order([0.5, 0.5], [0.1, 0.1])


@given(st.lists(st.tuples(st.floats(0.01, 1.0), unit), min_size=2, max_size=25, unique=True))
def test_greedy_order_verified(points):
    t = np.array([p[0] for p in points])
    x = np.array([p[1] for p in points])
    if len({(a, b) for a, b in zip(t, wrap(x))}) < t.size:
        return
    perm = greedy_order(t, x)
    assert sorted(perm) == list(range(t.size))
    assert check_greedy_order(t, x, perm)


def test_greedy_verifier_rejects_bad_order():
    t = np.array([0.5, 0.5, 0.5])
    x = np.array([0.0, 0.9, 0.05])
    assert not check_greedy_order(t, x, np.array([0, 1, 2]))
    assert check_greedy_order(t, x, greedy_order(t, x))
