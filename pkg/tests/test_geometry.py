import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alloylab.errors import ArgumentError
from alloylab.geometry import (
    ShearedUnion,
    enclosure_check,
    enclosure_violations,
    enlarged_volume,
    factorize_domain,
    mc_volume,
    sheared_union_decomposition,
    sheared_union_volume,
)
from alloylab.toeplitz import build_system

from conftest import random_site_array


@settings(max_examples=30, deadline=None)
@given(t=st.floats(-3, 3), w=st.floats(0.1, 4))
def test_interval_case_closed_form(t, w):
    u = ShearedUnion(1, (t,), w)
    lo, hi = u.bbox()
    assert sheared_union_volume(u) == pytest.approx(hi[0] - lo[0])


@pytest.mark.parametrize("t", [(0.5, -0.3), (-1.2, 0.4, 0.7), (0.0, 2.0)])
def test_union_volume_monte_carlo(t):
    u = ShearedUnion(len(t), t, 1.5)
    est, err = mc_volume(u.contains, u.bbox(), 200_000, seed=1)
    assert abs(est - sheared_union_volume(u)) <= 3 * err


def test_decomposition_pieces():
    u = ShearedUnion(3, (0.6, -0.4, 0.0), 1.0)
    pieces = sheared_union_decomposition(u)
    assert len(pieces) == 3
    np.testing.assert_allclose([p.volume for p in pieces], [1.0, 0.6, 0.4])
    assert sum(p.volume for p in pieces) == pytest.approx(sheared_union_volume(u), abs=1e-14)

    rng = np.random.default_rng(0)
    lo, hi = u.bbox()
    pts = lo + (hi - lo) * rng.random((100_000, 3))
    member = np.array([p.contains(pts) for p in pieces])
    inside = u.contains(pts)
    np.testing.assert_array_equal(member.any(axis=0), inside)
    assert np.count_nonzero(member.sum(axis=0) > 1) == 0


def test_mc_volume_reproducible_and_validated():
    u = ShearedUnion(2, (0.3, 0.3))
    assert mc_volume(u.contains, u.bbox(), 1000, 7) == mc_volume(u.contains, u.bbox(), 1000, 7)
    with pytest.raises(ArgumentError):
        mc_volume(u.contains, u.bbox(), 0)
    with pytest.raises(ArgumentError):
        ShearedUnion(2, (0.1,))


def test_partition_of_sites():
    s = build_system(np.array([[1.0, 0.2], [-0.3, 0.1]]), 2)
    f = factorize_domain(s, (1, 0))
    all_idx = np.sort(np.concatenate([f.less, [f.j], f.greater]))
    np.testing.assert_array_equal(all_idx, np.arange(s.size))
    pts = s.lambda_plus
    assert np.all(np.all(pts[f.greater] >= (1, 0), axis=1))
    assert not np.any(np.all(pts[f.less] >= (1, 0), axis=1))
    with pytest.raises(ArgumentError):
        factorize_domain(s, (9, 9))
    with pytest.raises(ArgumentError):
        factorize_domain(s, 999, by_index=True)


@pytest.mark.parametrize("d,pivot", [(1, (1,)), (2, (1, 1))])
def test_membership_factorises(d, pivot, rng):
    arr = random_site_array(rng, d, 1, 0.6)
    s = build_system(arr, 2)
    f = factorize_domain(s, pivot, 1.0)
    lo, hi = f.box_of_M()
    eta = lo + (hi - lo) * rng.random((20_000, s.size))
    el, ej, eg = f.split(eta)
    # the slab test for eta_j uses B_jj = 1 and B_jk = 0 for k above j
    factored = f.in_M_less(el) & np.array(
        [f.in_M_j(el[i], ej[i])[0] for i in range(len(ej))]
    ) & np.array([f.in_M_greater(el[i], ej[i], eg[i])[0] for i in range(len(ej))])
    np.testing.assert_array_equal(factored, f.in_M(eta))
    assert f.in_M(eta).any()


def test_sampled_slices_stay_in_domain(rng):
    s = build_system(np.array([1.0, -0.5]), 3)
    f = factorize_domain(s, (1,))
    eta = s.A @ rng.uniform(0, 1, s.size)
    el, ej, _ = f.split(eta)
    pts = f.sample_M_greater(el[0], np.repeat(ej, 50), rng)
    assert f.in_M_greater(el[0], np.repeat(ej, 50), pts).all()


@pytest.mark.parametrize("a", [np.array([1.0, -0.5]), np.array([1.0, 0.3, -0.4])])
def test_enclosure(a, rng):
    s = build_system(a, 4)
    for idx in range(s.size):
        f = factorize_domain(s, idx, 1.0, by_index=True)
        el = (s.A @ rng.uniform(0, 1, s.size))[f.less]
        assert enclosure_violations(f, el, 500, seed=idx) == 0
    assert enclosure_check(f, el)


@pytest.mark.parametrize("pivot", [(2,), (1,), (0,)])
def test_enlarged_volume_monte_carlo(pivot, rng):
    s = build_system(np.array([1.0, -0.5]), 2)
    f = factorize_domain(s, pivot, 1.0)
    assert f.greater.size <= 3
    el = (s.A @ rng.uniform(0, 1, s.size))[f.less]
    exact = enlarged_volume(f)
    est, err = mc_volume(lambda y: f.in_M_greater_plus(el, y), f.enlarged_bbox(el), 200_000, seed=3)
    assert abs(est - exact) <= 3 * err + 1e-12


def test_enlarged_volume_oracle_one_site_above():
    # Lambda_> = {j+1}: M_>^+ is an interval of length (1 + |B_{j+1,j}|) w
    s = build_system(np.array([1.0, -0.5]), 2)
    f = factorize_domain(s, (1,), 2.0)
    assert f.greater.size == 1
    assert enlarged_volume(f) == pytest.approx((1 + 0.5) * 2.0)


def test_domain_volume_is_unit_determinant(rng):
    s = build_system(np.array([1.0, -0.5]), 1)
    f = factorize_domain(s, (0,), 1.0)
    est, err = mc_volume(f.in_M, f.box_of_M(), 200_000, seed=2)
    assert abs(est - 1.0) <= 3 * err
