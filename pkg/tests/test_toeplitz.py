import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alloylab.errors import AdmissibilityError, ContractError, UnsupportedError
from alloylab.model import cube_points, sample_disorder
from alloylab.toeplitz import (
    build_system,
    column_sum_norm,
    cone_determinant,
    cone_leq,
    inverse_transform,
    invert_by_substitution,
    linear_extension,
    nu_trend,
    symbol_eval,
    symbol_sweep,
    system_for_config,
    toeplitz_matrix,
    transform,
    verify_cell_representation,
)

from conftest import make_config, random_site_array


def test_cone_order():
    assert cone_leq((2, 3), (1, 3))
    assert not cone_leq((2, 1), (1, 3))
    with pytest.raises(ValueError):
        cone_leq((1,), (1, 2))


def test_linear_extension_respects_cone_order():
    pts = cube_points(-1, 3, 2)
    pos = np.empty(len(pts), dtype=int)
    pos[linear_extension(pts)] = np.arange(len(pts))
    for i, p in enumerate(pts):
        for j, q in enumerate(pts):
            if np.all(p >= q):
                assert pos[j] <= pos[i]


def test_geometric_inverse_closed_form():
    # (1 - x S)^-1 = sum_n x^n S^n for the shift S
    system = build_system(np.array([1.0, -0.5]), 6)
    pts = system.lambda_plus[:, 0]
    diff = pts[:, None] - pts[None, :]
    expected = np.where(diff >= 0, 0.5 ** np.clip(diff, 0, None), 0.0)
    np.testing.assert_allclose(system.B, expected, atol=1e-15)


def test_toeplitz_entries():
    a = np.array([[1.0, 0.2], [-0.3, 0.1]])
    pts = cube_points(0, 2, 2)
    A = toeplitz_matrix(a, pts)
    idx = {tuple(p): i for i, p in enumerate(pts.tolist())}
    assert A[idx[(1, 1)], idx[(0, 0)]] == 0.1
    assert A[idx[(1, 1)], idx[(1, 0)]] == 0.2
    assert A[idx[(2, 1)], idx[(1, 1)]] == -0.3
    assert A[idx[(0, 0)], idx[(1, 1)]] == 0.0


@settings(max_examples=40, deadline=None)
@given(
    d=st.sampled_from([1, 2]),
    g=st.integers(1, 2),
    l=st.integers(1, 6),
    a_star=st.floats(0.05, 0.95),
    seed=st.integers(0, 2**31),
)
def test_inverse_properties(d, g, l, a_star, seed):
    arr = random_site_array(np.random.default_rng(seed), d, g, a_star)
    s = build_system(arr, l)
    n = s.size
    assert np.max(np.abs(s.A @ s.B - np.eye(n))) <= 1e-10
    rows, cols = np.nonzero(np.abs(s.B) > 0)
    assert np.all(s.lambda_plus[rows] >= s.lambda_plus[cols])
    assert column_sum_norm(s.B) <= 1 / (1 - s.a_star) + 1e-10
    assert cone_determinant(s.A, s.lambda_plus) == 1.0
    assert abs(np.linalg.det(s.A) - 1.0) <= 1e-8


def test_alternative_extension_gives_same_inverse(rng):
    arr = random_site_array(rng, 2, 1, 0.7)
    s = build_system(arr, 4)
    # coordinate-wise lexicographic order is another linear extension
    order = np.lexsort(tuple(s.lambda_plus[:, i] for i in range(1, -1, -1)))
    B2 = invert_by_substitution(s.A, s.lambda_plus, order)
    np.testing.assert_allclose(B2, s.B, atol=1e-14)


def test_contract_violations():
    pts = cube_points(0, 2, 1)
    A = np.eye(3)
    A[0, 1] = 0.3  # entry above the cone
    with pytest.raises(ContractError):
        invert_by_substitution(A, pts)
    with pytest.raises(ContractError):
        invert_by_substitution(2 * np.eye(3), pts)
    with pytest.raises(ContractError):
        cone_determinant(A, pts)


def test_determinant_of_general_cone_matrix():
    pts = cube_points(0, 3, 1)
    A = np.tril(np.arange(1.0, 17.0).reshape(4, 4))
    assert cone_determinant(A, pts) == pytest.approx(np.linalg.det(A))


def test_admissibility_checked():
    with pytest.raises(AdmissibilityError):
        build_system(np.array([1.0, 0.7, -0.3]), 4)
    with pytest.raises(AdmissibilityError):
        build_system(np.array([0.5, 0.1]), 4)


def test_transform_round_trip(rng):
    cfg = make_config(d=2, l=4, gamma=[[0, 0], [1, 0], [1, 1]], a=[1.0, -0.4, 0.3])
    s = system_for_config(cfg)
    omega = sample_disorder(cfg, 0, 0).omega
    np.testing.assert_allclose(inverse_transform(s, transform(s, omega)), omega, atol=1e-13)
    assert not s.A.flags.writeable and not s.B.flags.writeable


@pytest.mark.parametrize(
    "kw",
    [dict(), dict(d=2, l=4, gamma=[[0, 0], [1, 0], [0, 1]], a=[1.0, -0.3, 0.4]), dict(r=3, kappa=2.0)],
)
def test_cell_representation(kw):
    cfg = make_config(**kw)
    assert verify_cell_representation(cfg, sample_disorder(cfg, 4, 0)) <= 1e-12


def test_cell_representation_needs_step_bump():
    cfg = make_config(r=2, w=[1.0, 1.5])
    with pytest.raises(UnsupportedError):
        verify_cell_representation(cfg, sample_disorder(cfg, 0, 0))


def test_symbol():
    theta = np.linspace(-np.pi, np.pi, 9)
    np.testing.assert_allclose(symbol_eval([1.0, -0.5], theta), 1 - 0.5 * np.exp(1j * theta))
    sweep = symbol_sweep(np.array([[1.0, 0.3], [0.2, -0.1]]), 64)
    assert sweep.shape == (64, 4)
    assert sweep[:, 3].min() >= 1 - 0.6 - 1e-12
    np.testing.assert_allclose(sweep[:, 3], np.hypot(sweep[:, 1], sweep[:, 2]))


def test_nu_bounded_below():
    nu = nu_trend(np.array([1.0, -0.5]), [4, 8, 16, 32])
    assert np.all(nu >= 0.5 - 1e-12)
    assert np.all(np.diff(nu) <= 1e-12)
