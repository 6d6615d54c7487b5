"""
Tests for grids, discrete operators and the sparse solvers
"""

import numpy as np
import pytest

from src.discretization import (Grid, dirichlet_form, dirichlet_riesz, gradient_field, integrate,
                                laplacian_apply, linear_solve, sphere_area)
from src.errors import ConfigError, LinearSolverError


def test_box_laplacian_exact_on_quadratics():
    grid = Grid.box(33)
    u = np.sum(grid.points ** 2, axis=-1)
    lap = laplacian_apply(grid, u)
    assert np.allclose(lap[grid.interior], 4.0, rtol=0, atol=1e-10)
    assert not np.any(lap[~grid.interior])


def test_constant_has_zero_laplacian():
    grid = Grid.box(17, 0.0, 2.0, -1.0, 1.0)
    lap = laplacian_apply(grid, np.full(grid.shape, 3.0))
    assert np.allclose(lap, 0.0, atol=1e-12)


def test_radial_laplacian_of_r_squared():
    """u'' + 2u'/r = 6 for u = r^2 in N = 3, including the centre node"""
    grid = Grid.radial(65, 1.0, 3)
    lap = laplacian_apply(grid, grid.coords[0] ** 2)
    assert np.allclose(lap[:-1], 6.0, rtol=1e-10)
    assert lap[-1] == 0.0


def test_integrate_volumes():
    assert integrate(Grid.box(33), np.ones((33, 33))) == pytest.approx(4.0, abs=1e-12)
    radial = Grid.radial(129, 1.0, 3)
    assert integrate(radial, np.ones(129)) == pytest.approx(4.0 * np.pi / 3.0, rel=1e-12)
    planar = Grid.radial(129, 2.0, 2)
    assert integrate(planar, np.ones(129)) == pytest.approx(4.0 * np.pi, rel=1e-12)


def test_integrate_half_indicator():
    """Indicator of x > 0 plus half of the x = 0 column gives half the volume"""
    grid = Grid.box(33)
    x = grid.points[..., 0]
    f = np.where(x > 0, 1.0, 0.0) + np.where(x == 0, 0.5, 0.0)
    assert integrate(grid, f) == pytest.approx(2.0, abs=1e-12)


def test_radial_moments():
    """int r^k dV over the unit ball in N = 3 is 4 pi / (k + 3)"""
    grid = Grid.radial(257, 1.0, 3)
    r = grid.coords[0]
    for k in (1, 2, 4):
        assert integrate(grid, r ** k) == pytest.approx(4.0 * np.pi / (k + 3), rel=1e-3)


def test_sphere_area():
    assert sphere_area(2) == pytest.approx(2.0 * np.pi)
    assert sphere_area(3) == pytest.approx(4.0 * np.pi)


def test_gradient_field():
    grid = Grid.box(33)
    x, y = grid.points[..., 0], grid.points[..., 1]
    grad = gradient_field(grid, 3.0 * x - 2.0 * y)
    assert grad.shape == (2,) + grid.shape
    assert np.allclose(grad[0], 3.0) and np.allclose(grad[1], -2.0)
    quadratic = gradient_field(grid, x ** 2)
    assert np.max(np.abs(quadratic[0][1:-1] - 2.0 * x[1:-1])) <= 1e-12
    radial = Grid.radial(33, 1.0, 3)
    assert gradient_field(radial, 2.0 * radial.coords[0]).shape == (1, 33)


def test_summation_by_parts():
    """<-Delta_h u, v> = u^T K v for admissible v"""
    rng = np.random.default_rng(1)
    for grid in (Grid.box(17), Grid.disk(33), Grid.radial(33, 1.0, 3)):
        u = rng.normal(size=grid.shape)
        v = np.where(grid.interior, rng.normal(size=grid.shape), 0.0)
        lhs = integrate(grid, -laplacian_apply(grid, u) * v)
        assert lhs == pytest.approx(dirichlet_form(grid, u, v), rel=1e-12, abs=1e-10)


def test_linear_solve_zero_rhs():
    grid = Grid.box(17)
    assert not np.any(linear_solve(grid, grid.zeros()))


def test_linear_solve_eigenfunction():
    grid = Grid.box(33, 0.0, 1.0, 0.0, 1.0)
    x, y = grid.points[..., 0], grid.points[..., 1]
    exact = np.sin(np.pi * x) * np.sin(np.pi * y)
    u = linear_solve(grid, 2.0 * np.pi ** 2 * exact)
    assert np.max(np.abs(u - exact)) <= 2e-3
    shifted = linear_solve(grid, (2.0 * np.pi ** 2 + 5.0) * exact, shift=5.0)
    assert np.max(np.abs(shifted - exact)) <= 2e-3


def test_linear_solve_refinement():
    """Centre value of -Delta u = 1 on the unit square settles under refinement"""
    centres = []
    for n in (33, 65, 129):
        grid = Grid.box(n, 0.0, 1.0, 0.0, 1.0)
        u = linear_solve(grid, np.ones(grid.shape))
        centres.append(u[n // 2, n // 2])
    richardson = centres[2] + (centres[2] - centres[1]) / 3.0
    assert abs(centres[2] - richardson) <= 1e-3
    assert centres[2] == pytest.approx(0.0736713, abs=1e-3)


def test_linear_solve_reports_residual():
    grid = Grid.box(33)
    with pytest.raises(LinearSolverError) as info:
        linear_solve(grid, np.ones(grid.shape), maxiter=1)
    assert info.value.residual > 0


def test_dirichlet_riesz_solves_poisson():
    grid = Grid.box(17)
    r = np.where(grid.interior, 1.0, 0.0)
    d = dirichlet_riesz(grid, r)
    assert np.allclose(-laplacian_apply(grid, d)[grid.interior], 1.0)
    assert grid.is_admissible(d)


def test_grid_validation():
    with pytest.raises(ConfigError):
        Grid.box(8)
    with pytest.raises(ConfigError):
        Grid.box(17, 1.0, -1.0)
    with pytest.raises(ConfigError):
        Grid.radial(33, 1.0, 4)
    with pytest.raises(ConfigError):
        Grid("annulus", (17, 17), (0.0, 0.0), (1.0, 1.0))


def test_disk_mask_and_weights():
    grid = Grid.disk(33, 1.0)
    assert not np.any(grid.interior & (grid.norm >= 1.0))
    assert np.all(grid.weights[~grid.interior] == 0.0)
    assert grid.volume == pytest.approx(np.pi, rel=0.05)


def test_admissibility_and_restriction():
    grid = Grid.box(17)
    u = np.where(grid.interior, 1.0, 0.0)
    assert grid.is_admissible(u)
    assert not grid.is_admissible(np.ones(grid.shape))
    assert np.array_equal(grid.extend(grid.restrict(u)), u)


def test_interpolator_and_containment():
    grid = Grid.box(17)
    u = grid.points[..., 0] + 2.0 * grid.points[..., 1]
    interp = grid.interpolator(u)
    assert interp(np.array([[0.3, -0.2]]))[0] == pytest.approx(-0.1)
    assert np.isnan(interp(np.array([[1.5, 0.0]]))[0])
    assert grid.contains_ball(np.array([0.0, 0.0]), 1.0)
    assert not grid.contains_ball(np.array([0.5, 0.0]), 0.6)

    radial = Grid.radial(33, 1.0, 3)
    profile = radial.interpolator(1.0 - radial.coords[0])
    assert profile(np.array([[0.3, 0.4, 0.0]]))[0] == pytest.approx(0.5)
    assert np.isnan(profile(np.array([[2.0]]))[0])


def test_boundary_distance():
    grid = Grid.box(17)
    assert np.all(grid.boundary_distance[~grid.interior] == 0.0)
    assert grid.boundary_distance[8, 8] == pytest.approx(1.0)
