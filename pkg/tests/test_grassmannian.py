import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisovar.grassmannian import (
    DegenerateBasisError,
    Plane,
    TangentVector,
    grid_from_json,
    grid_to_json,
    moved_plane,
    normal_to_plane,
    plane_distance,
    plane_from_basis,
    projection_curve_derivative,
    sample_grid,
    sphere_directions,
)

dims = st.sampled_from([(2, 1), (3, 1), (3, 2), (4, 2), (4, 3), (5, 2)])


def random_plane(rng, n, d):
    return plane_from_basis(rng.standard_normal((d, n)))


def test_plane_from_basis_examples():
    assert np.allclose(plane_from_basis([[1.0, 0.0]]).P, np.diag([1.0, 0.0]), atol=1e-15)
    assert np.allclose(plane_from_basis([[1, 0, 0], [0, 1, 0]]).P, np.diag([1.0, 1.0, 0.0]), atol=1e-15)
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    assert np.allclose(plane_from_basis([v]).P, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_plane_from_basis_rejects_rank_deficiency():
    with pytest.raises(DegenerateBasisError):
        plane_from_basis([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    with pytest.raises(ValueError):
        plane_from_basis(np.eye(3))


def test_basis_independence():
    rng = np.random.default_rng(1)
    E = rng.standard_normal((2, 4))
    M = np.array([[2.0, 1.0], [-1.0, 3.0]])
    assert np.linalg.norm(plane_from_basis(E).P - plane_from_basis(M @ E).P) <= 1e-10


def test_normal_to_plane_examples():
    assert np.array_equal(normal_to_plane([1.0, 0.0]).P, np.diag([0.0, 1.0]))
    assert np.array_equal(normal_to_plane([0.0, 0.0, 1.0]).P, np.diag([1.0, 1.0, 0.0]))
    nu = np.ones(3) / np.sqrt(3)
    assert np.allclose(normal_to_plane(nu).P, np.eye(3) - np.ones((3, 3)) / 3, atol=1e-15)


def test_normal_to_plane_is_even_and_checks_norm():
    rng = np.random.default_rng(2)
    for _ in range(20):
        nu = rng.standard_normal(4)
        nu /= np.linalg.norm(nu)
        assert normal_to_plane(nu) == normal_to_plane(-nu)
    normal_to_plane([1.0 + 5e-7, 0.0])
    with pytest.raises(ValueError):
        normal_to_plane([1.1, 0.0])


def test_plane_rejects_non_projection():
    with pytest.raises(ValueError):
        Plane(2, 1, np.diag([1.0, 0.5]))
    with pytest.raises(ValueError):
        Plane(2, 1, np.eye(2))
    with pytest.raises(ValueError):
        Plane(2, 2, np.eye(2))


def test_plane_distance_examples():
    e1 = plane_from_basis([[1.0, 0.0]])
    e2 = plane_from_basis([[0.0, 1.0]])
    diag = plane_from_basis([[1.0, 1.0]])
    assert plane_distance(e1, e1) == 0.0
    assert plane_distance(e1, e2) == pytest.approx(np.sqrt(2), abs=1e-15)
    assert plane_distance(e1, diag) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        plane_distance(e1, plane_from_basis([[1.0, 0.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(dims, st.integers(0, 2**32 - 1))
def test_plane_distance_is_a_metric(nd, seed):
    rng = np.random.default_rng(seed)
    A, B, C = (random_plane(rng, *nd) for _ in range(3))
    assert plane_distance(A, B) == pytest.approx(plane_distance(B, A), abs=1e-15)
    assert plane_distance(A, C) <= plane_distance(A, B) + plane_distance(B, C) + 1e-14


def test_curve_derivative_examples():
    T = plane_from_basis([[1.0, 0.0]])
    assert np.array_equal(projection_curve_derivative(T, np.eye(2)).S, np.zeros((2, 2)))
    S = projection_curve_derivative(T, np.outer([0.0, 1.0], [1.0, 0.0])).S
    assert np.array_equal(S, [[0.0, 1.0], [1.0, 0.0]])
    rng = np.random.default_rng(3)
    U = random_plane(rng, 4, 2)
    assert np.linalg.norm(projection_curve_derivative(U, U.P).S) <= 1e-14


@settings(max_examples=40, deadline=None)
@given(dims, st.integers(0, 2**32 - 1))
def test_curve_derivative_matches_finite_differences(nd, seed):
    rng = np.random.default_rng(seed)
    T = random_plane(rng, *nd)
    L = rng.standard_normal((nd[0], nd[0]))
    L /= np.linalg.norm(L)
    S = projection_curve_derivative(T, L).S
    errs = [np.linalg.norm((moved_plane(T, L, t).P - T.P) / t - S) for t in (1e-3, 1e-4, 1e-5)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] <= 10 * 1e-4


def test_tangent_vector_invariants():
    T = plane_from_basis([[1.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        TangentVector(T, np.eye(3))
    with pytest.raises(ValueError):
        TangentVector(T, np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))


@settings(max_examples=25, deadline=None)
@given(dims, st.integers(1, 50), st.integers(0, 1000))
def test_sample_grid_invariants_and_determinism(nd, N, seed):
    n, d = nd
    grid = sample_grid(n, d, N, seed)
    assert len(grid) == N
    for T in grid:
        assert np.linalg.norm(T.P @ T.P - T.P) <= 1e-12
        assert np.linalg.norm(T.P - T.P.T) <= 1e-12
        assert abs(np.trace(T.P) - d) <= 1e-12
    assert grid == sample_grid(n, d, N, seed)


def test_codim1_grid_is_antipodally_reduced():
    grid = sample_grid(2, 1, 4, 0)
    angles = sorted(np.arctan2(T.normal()[1], T.normal()[0]) % np.pi for T in grid)
    assert np.allclose(np.diff(angles), np.pi / 4)
    dirs = sphere_directions(3, 500)
    assert np.all(dirs[:, 2] > 0)
    assert np.abs(dirs @ dirs.T - np.eye(500)).max() < 1 - 1e-9


def test_json_round_trip():
    grid = sample_grid(3, 1, 5, 7)
    again = grid_from_json(grid_to_json(grid))
    assert again == grid
    assert Plane.from_dict(grid[0].to_dict()).d == 1
