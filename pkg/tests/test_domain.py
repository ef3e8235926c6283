from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsroute.domain import (GridMeasure, GridMeasureK, IntensityDensity, PointConfig, Window, build_grid,
                               coarsen, locate_cell, on_face, path_loss, sample_ppp, triadic_level)


def test_path_loss_values():
    assert path_loss(0.0, 2) == 1.0
    assert path_loss(2.0, 2) == 0.25
    assert path_loss(0.5, 2) == 1.0


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0.1, 6))
def test_path_loss_nonincreasing(a, b, alpha):
    lo, hi = sorted((a, b))
    assert path_loss(lo, alpha) >= path_loss(hi, alpha)


def test_path_loss_rejects_bad_input():
    with pytest.raises(ValueError):
        path_loss(-1.0, 2)
    with pytest.raises(ValueError):
        path_loss(1.0, 0)


@pytest.mark.parametrize("d,delta,cells", [(2, 1, 1), (2, Fraction(1, 3), 9), (1, Fraction(1, 3), 3),
                                           (1, Fraction(1, 27), 27)])
def test_grid_cell_counts(d, delta, cells):
    assert build_grid(Window(1.0, d), delta).n_cells == cells


def test_origin_is_centre_of_middle_cell():
    g = build_grid(Window(1.0, 1), Fraction(1, 3))
    assert np.allclose(g.centers().ravel(), [-2 / 3, 0, 2 / 3])
    assert g.origin_cell() == 1
    assert locate_cell([0.0], g) == 1  # second of three cells


def test_non_triadic_delta_rejected():
    with pytest.raises(ValueError):
        triadic_level(Fraction(1, 2))


def test_locate_cell_faces_and_corners():
    g = build_grid(Window(1.0, 1), Fraction(1, 3))
    with pytest.raises(ValueError):
        locate_cell([1 / 3], g)
    with pytest.raises(ValueError):
        locate_cell([2.0], g)
    assert locate_cell([-1 + 1e-6], g) == 0
    g2 = build_grid(Window(1.0, 2), Fraction(1, 3))
    assert locate_cell([-1 + 1e-6, -1 + 1e-6], g2) == 0
    assert locate_cell([0.9, -0.9], g2) == 6  # first coordinate most significant


def test_sampling_is_deterministic(uniform_line):
    a = sample_ppp(30, uniform_line, seed=5)
    b = sample_ppp(30, uniform_line, seed=5)
    assert np.array_equal(a.points, b.points)


def test_sampling_respects_support(line):
    g = build_grid(line, Fraction(1, 3))
    mu = IntensityDensity.tabulated(g, [0.5, 0.0, 0.0])
    pts = sample_ppp(200, mu, seed=1).points
    assert np.all(pts < -1 / 3)


def test_sampling_callback_density_support(line):
    mu = IntensityDensity.from_callback(line, lambda x: (np.atleast_2d(x)[:, 0] < 0).astype(float), bound=1.0)
    pts = sample_ppp(100, mu, seed=2).points
    assert pts.shape[0] > 0 and np.all(pts[:, 0] < 0)


def test_poisson_count_mean(uniform_line):
    rng = np.random.default_rng(0)
    counts = [sample_ppp(100, uniform_line, rng=rng).N for _ in range(1000)]
    assert abs(np.mean(counts) - 100) <= 3 * np.sqrt(100 / 1000)


def test_sampled_points_avoid_faces(uniform_line):
    pc = sample_ppp(500, uniform_line, seed=3)
    assert not on_face(pc.points, pc.window).any()


@pytest.mark.parametrize("delta", [Fraction(1), Fraction(1, 3), Fraction(1, 9), Fraction(1, 27)])
def test_empirical_mass_is_N_over_lambda(uniform_line, delta):
    pc = sample_ppp(40, uniform_line, seed=11)
    emp = pc.empirical(build_grid(pc.window, delta))
    assert emp.total == pytest.approx(pc.N / pc.lam, abs=1e-12)


def test_uniform_cell_masses_match_quadrature(line):
    g = build_grid(line, Fraction(1, 9))
    closed = IntensityDensity.uniform(line, 2.0).cell_masses(g)
    quad = IntensityDensity.from_callback(line, lambda x: np.ones(np.atleast_2d(x).shape[0]), bound=1.0,
                                          total_mass=2.0).cell_masses(g)
    assert np.allclose(closed, quad, atol=1e-12)


def _random_k_measure(grid, k, seed):
    rng = np.random.default_rng(seed)
    return GridMeasureK(grid, k, rng.random((grid.n_cells,) * k))


def test_coarsen_identity_mass_and_tower():
    w = Window(1.0, 2)
    fine, mid, top = (build_grid(w, d) for d in (Fraction(1, 9), Fraction(1, 3), 1))
    nu = _random_k_measure(fine, 2, 0)
    assert np.array_equal(coarsen(nu, fine).masses, nu.masses)
    assert coarsen(nu, top).total == pytest.approx(nu.total, rel=1e-12)
    assert np.allclose(coarsen(coarsen(nu, mid), top).masses, coarsen(nu, top).masses, atol=1e-12)


def test_coarsen_exact_on_fractions():
    w = Window(1.0, 1)
    fine, mid = build_grid(w, Fraction(1, 9)), build_grid(w, Fraction(1, 3))
    m = GridMeasure(fine, np.array([Fraction(i, 7) for i in range(9)], dtype=object))
    once = coarsen(m, mid)
    assert sum(once.masses) == sum(m.masses)
    assert list(coarsen(once, mid).masses) == list(once.masses)


def test_coarsen_sparse_matches_dense():
    w = Window(1.0, 1)
    fine, top = build_grid(w, Fraction(1, 3)), build_grid(w, Fraction(1))
    rng = np.random.default_rng(4)
    arr = rng.random((3,) * 4)
    sparse = GridMeasureK(fine, 4, arr)
    assert not sparse.is_dense
    c = coarsen(sparse, top)
    assert c.total == pytest.approx(arr.sum(), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_coarsening_idempotent(seed):
    w = Window(1.0, 1)
    fine, mid = build_grid(w, Fraction(1, 27)), build_grid(w, Fraction(1, 3))
    m = GridMeasure(fine, np.random.default_rng(seed).random(27))
    once = coarsen(m, mid)
    assert np.allclose(coarsen(once, mid).masses, once.masses, atol=1e-12)
    assert once.total == pytest.approx(m.total, abs=1e-12)


def test_point_config_validation(line):
    with pytest.raises(ValueError):
        PointConfig(0.0, np.zeros((1, 1)), line)
    with pytest.raises(ValueError):
        PointConfig(1.0, np.array([[1.5]]), line)
