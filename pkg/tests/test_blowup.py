import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisovar.blowup import (
    DiscreteMeasure,
    density_profile,
    lemma21_scan,
    lower_density_part,
    plane_distribution_profile,
    preiss_constants,
    preiss_constants_exact,
    preiss_diagnostics,
    project_pushforward,
    rescale,
    unit_ball_volume,
)
from anisovar.grassmannian import plane_from_basis, sample_grid
from anisovar.integrand import AreaIntegrand, ConstantIntegrand
from anisovar.varifold import DiscreteVarifold


def lattice(n, d, h, R, basis=None):
    """Unit-density samples of a d-disk of radius R: a cubic lattice with cell masses h^d."""
    E = np.eye(n)[:d] if basis is None else np.linalg.qr(np.asarray(basis).T)[0].T
    c = np.arange(-R, R + h / 2, h)
    g = np.stack(np.meshgrid(*([c] * d), indexing="ij"), -1).reshape(-1, d)
    g = g[np.linalg.norm(g, axis=1) <= R]
    return DiscreteMeasure(n, g @ E, np.full(len(g), h**d)), E


def test_unit_ball_volumes():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


def test_measure_invariants():
    with pytest.raises(ValueError):
        DiscreteMeasure(2, [[0.0, 0.0]], [-1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure(2, [[0.0, 0.0]], [1.0, 2.0])
    mu = DiscreteMeasure(2, [[0.0, 0.0], [1.0, 0.0]], [1.0, 2.0])
    assert mu.ball_mass([0.0, 0.0], 1.0) == 3.0  # closed ball
    assert mu.ball_mass([0.0, 0.0], 0.999) == 1.0


def test_rescale_examples():
    mu = DiscreteMeasure(3, [[1.0, 2.0, 3.0]], [4.0])
    out = rescale(mu, [1.0, 2.0, 3.0], 0.3)
    assert np.array_equal(out.points, [[0.0, 0.0, 0.0]]) and np.array_equal(out.masses, [1.0])
    with pytest.raises(ValueError, match="empty"):
        rescale(mu, [10.0, 0.0, 0.0], 1.0)


def test_rescale_of_a_plane_is_a_plane():
    mu, E = lattice(3, 2, 0.01, 1.0, [[1.0, 1.0, 0.0], [0.0, 1.0, 2.0]])
    out = rescale(mu, np.zeros(3), 0.4)
    P = E.T @ E
    assert np.allclose(out.points @ P, out.points, atol=1e-13)
    assert out.total_mass() == pytest.approx(1.0, abs=0.01)
    assert np.max(np.linalg.norm(out.points, axis=1)) < 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 3.0))
def test_rescale_total_mass_at_most_one(seed, r):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(2, rng.standard_normal((50, 2)), rng.uniform(0.1, 1.0, 50))
    x = mu.points[0]
    out = rescale(mu, x, r)
    assert out.total_mass() <= 1.0 + 1e-12
    on_sphere = np.isclose(np.linalg.norm(mu.points - x, axis=1), r, rtol=0, atol=0)
    if not on_sphere.any():
        assert out.total_mass() == pytest.approx(1.0, rel=1e-12)


def test_density_profile_of_planes():
    mu, _ = lattice(3, 2, 0.004, 1.0)
    prof = density_profile(mu, np.array([0.0005, 0.0003, 0.0]), 2, np.geomspace(0.5, 0.05, 6))
    assert np.all(np.diff(prof.radii) < 0)
    assert np.all(np.abs(prof.ratios[prof.resolved] - 1) <= 0.05)
    assert prof.floor == pytest.approx(5 * 0.004, rel=1e-9)
    line, _ = lattice(3, 1, 0.001, 1.0)
    prof = density_profile(line, np.zeros(3), 2, np.geomspace(0.5, 0.05, 6))
    assert prof.slope() == pytest.approx(-1.0, abs=0.1)
    empty = DiscreteMeasure(2, np.zeros((0, 2)), [])
    assert np.all(density_profile(empty, np.zeros(2), 1, [1.0, 0.5]).ratios == 0)
    with pytest.raises(ValueError):
        density_profile(mu, np.zeros(3), 2, [0.5, 0.0])


def test_unresolved_radii_are_flagged():
    mu, _ = lattice(2, 1, 0.01, 1.0)
    prof = density_profile(mu, np.zeros(2), 1, [0.5, 0.1, 0.04, 0.01])
    assert prof.resolved.tolist() == [True, True, False, False]
    assert [row[2] for row in prof.rows()] == ["ok", "ok", "unresolved", "unresolved"]


def test_lemma21_examples():
    mu, _ = lattice(3, 2, 0.004, 1.0)
    rep = lemma21_scan(mu, np.array([0.0005, 0.0003, 0.0]), 2, 0.5, np.geomspace(0.5, 0.1, 4))
    # ball-volume ratio oracle: (t r)^2 / r^2
    assert rep.ratios == pytest.approx(np.full(4, 0.25), abs=0.02)
    assert rep.holds
    point = DiscreteMeasure(2, [[0.3, 0.4]], [2.0])
    rep = lemma21_scan(point, [0.3, 0.4], 3, 0.1, [1.0, 0.1, 0.01])
    assert np.all(rep.ratios == 1.0) and rep.holds
    away = lemma21_scan(point, [5.0, 5.0], 1, 0.5, [1.0, 0.5])
    assert away.skipped == [1.0, 0.5] and not away.holds
    with pytest.raises(ValueError):
        lemma21_scan(point, [0.0, 0.0], 1, 1.0, [1.0])


def test_preiss_constants():
    assert preiss_constants(1) == (0.9921875, 0.0009765625)
    for d in range(1, 5):
        a, b = preiss_constants_exact(d)
        assert a == 1 - 2 ** -(d + 6)
        assert b * 2 ** (d + 9) * d**4 == 1


def test_preiss_diagnostics_on_a_line():
    mu, E = lattice(2, 1, 1e-4, 1.0)
    grid = sample_grid(2, 1, 8, 0) + [plane_from_basis(E)]
    rep = preiss_diagnostics(mu, np.zeros(2), 1, [0.4, 0.2, 0.1], grid)
    assert np.all(rep.e_fraction == 0.0)
    assert np.all(rep.density == pytest.approx(1.0, abs=1e-3))
    # the best plane is the line itself: ball ratio about beta^d
    assert np.all(rep.f_value <= 1.2 * rep.f_reference) and np.all(rep.f_value >= 0.4 * rep.f_reference)
    assert all(len(s) >= 1 for s in rep.scales_used)


def test_preiss_e_fraction_sees_a_gap():
    # a heavy cluster on the line inflates the density at x; plain line atoms fall below alpha
    line, _ = lattice(2, 1, 1e-4, 1.0)
    cluster = DiscreteMeasure(2, np.tile([0.01, 0.0], (200, 1)), np.full(200, 2e-3))
    mu = DiscreteMeasure(2, np.vstack([line.points, cluster.points]), np.concatenate([line.masses, cluster.masses]))
    rep = preiss_diagnostics(mu, np.zeros(2), 1, [0.4], sample_grid(2, 1, 8, 0))
    assert rep.density[0] == pytest.approx(1.5, rel=0.01)
    assert 0.3 < rep.e_fraction[0] < 0.8


def test_project_pushforward_examples():
    S = plane_from_basis([[1.0, 0.0]])
    xs = np.array([[-0.5, 0.0], [0.25, 0.0]])
    V = DiscreteVarifold(2, 1, xs, [S, S], [1.0, 2.0])
    mu = project_pushforward(V, AreaIntegrand(2, 1), S)
    assert np.array_equal(mu.points, xs) and np.array_equal(mu.masses, [1.0, 2.0])
    theta = 0.6
    u = np.array([math.cos(theta), math.sin(theta)])
    tilted = DiscreteVarifold(2, 1, np.outer([0.5, 1.0], u), [plane_from_basis([u])] * 2, [1.0, 1.0])
    mu = project_pushforward(tilted, ConstantIntegrand(2, 1, 3.0), S)
    assert mu.points[:, 0] == pytest.approx(np.array([0.5, 1.0]) * math.cos(theta))
    assert np.array_equal(mu.masses, [3.0, 3.0])
    vertical = DiscreteVarifold(2, 1, [[0.2, y] for y in np.linspace(-1, 1, 9)],
                                [plane_from_basis([[0.0, 1.0]])] * 9, np.ones(9))
    mu = project_pushforward(vertical, AreaIntegrand(2, 1), S)
    assert len(np.unique(mu.points, axis=0)) == 1 and mu.total_mass() == 9.0


def test_plane_distribution_and_lower_density():
    mu, E = lattice(3, 1, 0.01, 1.0)
    T = plane_from_basis(E)
    V = DiscreteVarifold(3, 1, mu.points, [T] * len(mu), mu.masses)
    prof = plane_distribution_profile(V, np.zeros(3), [0.5, 0.2, 0.1])
    assert max(prof["drift"]) <= 1e-12
    stray = DiscreteVarifold(3, 1, np.vstack([V.points, [[0.0, 3.0, 0.0]]]), list(V.planes) + [T],
                             np.concatenate([V.masses, [1e-4]]))
    kept, lows = lower_density_part(stray, [0.4, 0.2, 0.1], 0.1)
    assert len(kept) == len(V) and lows[-1] < 0.01
