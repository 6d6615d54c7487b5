"""
Tests for free-boundary extraction, one-sided gradients and distance fields
"""

import numpy as np
import pytest

from src.discretization import Grid
from src.freeboundary import (attach_gradients, distance_to_sublevel, extract_free_boundary,
                              one_sided_gradients)

ALPHA = 2.0
BETA = np.sqrt(2.0)


def cone(grid: Grid) -> np.ndarray:
    """u = 2 - 2|x| clipped at 0: {u > 1} is the disc of radius 1/2"""
    return np.maximum(2.0 - 2.0 * grid.norm, 0.0)


def planar(grid: Grid, alpha: float = ALPHA, beta: float = BETA) -> np.ndarray:
    x = grid.points[..., 0]
    return 1.0 + alpha * np.maximum(x, 0.0) - beta * np.maximum(-x, 0.0)


def test_empty_for_zero_field():
    grid = Grid.box(17)
    fb = extract_free_boundary(grid, grid.zeros())
    assert fb.is_empty
    assert fb.total_length() == 0.0


def test_cone_circle():
    grid = Grid.box(65)
    fb = extract_free_boundary(grid, cone(grid))
    radii = np.linalg.norm(fb.points, axis=-1)
    assert np.max(np.abs(radii - 0.5)) <= grid.h
    assert fb.total_length() == pytest.approx(np.pi, abs=5 * grid.h)


def test_points_lie_on_the_level_set():
    grid = Grid.box(65)
    u = cone(grid)
    fb = extract_free_boundary(grid, u)
    assert np.all(np.abs(grid.interpolator(u)(fb.points) - 1.0) <= 1e-9)


def test_normals_point_into_superlevel_set():
    grid = Grid.box(65)
    fb = extract_free_boundary(grid, cone(grid))
    lengths = np.linalg.norm(fb.normals, axis=-1)
    assert np.allclose(lengths, 1.0, atol=1e-12)
    inward = -fb.points / np.linalg.norm(fb.points, axis=-1, keepdims=True)
    assert np.all(np.sum(fb.normals * inward, axis=-1) > 0.99)


def test_segments_keep_superlevel_set_on_the_left():
    """Oriented segments enclose {u > 1} counter-clockwise"""
    grid = Grid.box(65)
    fb = extract_free_boundary(grid, cone(grid))
    a, b = fb.segments[:, 0], fb.segments[:, 1]
    signed_area = 0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1])
    assert signed_area == pytest.approx(np.pi / 4.0, rel=0.02)


def test_saddle_cell_is_resolved_by_cell_mean():
    """Two diagonal corners above the level: connected when the mean is above 1"""
    grid = Grid.box(17)
    u = grid.zeros()
    u[8, 8] = u[9, 9] = 3.0
    fb = extract_free_boundary(grid, u)
    # mean of the saddle cell is 1.5, so its two segments bridge the diagonal
    assert len(fb.segments) == 8
    u[8, 8] = u[9, 9] = 1.5
    split = extract_free_boundary(grid, u)
    assert len(split.segments) == 8
    assert split.total_length() < fb.total_length()


def test_radial_crossing():
    grid = Grid.radial(129, 1.0, 3)
    fb = extract_free_boundary(grid, 2.0 - 2.0 * grid.coords[0])
    assert fb.points.shape == (1, 1)
    assert fb.points[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert fb.normals[0, 0] == -1.0


def test_planar_one_sided_gradients_are_exact():
    grid = Grid.box(33)
    alpha, beta, valid = one_sided_gradients(grid, planar(grid), np.array([0.0, 0.1]), np.array([1.0, 0.0]))
    assert valid
    assert alpha == pytest.approx(ALPHA, abs=1e-12)
    assert beta == pytest.approx(BETA, abs=1e-12)


def test_symmetric_tent():
    grid = Grid.box(33)
    u = planar(grid, 1.5, 1.5)
    alpha, beta, _ = one_sided_gradients(grid, u, np.array([0.0, -0.3]), np.array([1.0, 0.0]))
    assert alpha == pytest.approx(beta, abs=1e-12)
    assert alpha == pytest.approx(1.5, abs=1e-12)


def test_no_room_near_the_boundary():
    grid = Grid.box(33)
    alpha, beta, valid = one_sided_gradients(grid, planar(grid), np.array([0.95, 0.0]), np.array([1.0, 0.0]))
    assert not valid
    assert np.isnan(alpha) and np.isnan(beta)


def test_cone_gradients():
    grid = Grid.box(129)
    u = cone(grid)
    fb = attach_gradients(grid, u, extract_free_boundary(grid, u))
    assert np.all(fb.valid)
    assert np.median(fb.alpha) == pytest.approx(2.0, abs=0.05)
    assert np.median(fb.beta) == pytest.approx(2.0, abs=0.05)


def test_jump_residual_converges_under_refinement():
    """alpha^2 - beta^2 - 2 on a perturbed planar profile shrinks with h"""
    errors, steps = [], []
    for n in (33, 65, 129):
        grid = Grid.box(n)
        x, y = grid.points[..., 0], grid.points[..., 1]
        u = planar(grid) + 0.5 * x * x * (1.0 + y)
        fb = attach_gradients(grid, u, extract_free_boundary(grid, u))
        residual = fb.alpha[fb.valid] ** 2 - fb.beta[fb.valid] ** 2 - 2.0
        errors.append(np.median(np.abs(residual)))
        steps.append(grid.h)
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    assert slope >= 0.9


def test_distance_three_four_five():
    grid = Grid.box(33)
    u = np.full(grid.shape, 2.0)
    u[16, 16] = 0.0
    for method in ("exact", "two_pass"):
        distance = distance_to_sublevel(grid, u, method=method).values
        assert distance[16, 16] == 0.0
        assert distance[19, 20] == pytest.approx(5.0 * grid.h)


def test_distance_matches_brute_force():
    grid = Grid.box(17)
    rng = np.random.default_rng(23)
    u = rng.uniform(0.0, 2.0, grid.shape)
    distance = distance_to_sublevel(grid, u).values
    points = grid.points.reshape(-1, 2)
    sites = points[(u <= 1.0).ravel()]
    brute = np.min(np.linalg.norm(points[:, None, :] - sites[None, :, :], axis=-1), axis=1)
    assert np.allclose(distance.ravel(), brute, atol=1e-12)
    assert np.all(distance[u <= 1.0] == 0.0)


def test_distance_is_lipschitz_across_neighbours():
    grid = Grid.box(33)
    u = cone(grid) + 0.1
    distance = distance_to_sublevel(grid, u).values
    assert np.max(np.abs(np.diff(distance, axis=0))) <= grid.h * (1 + 1e-12)
    assert np.max(np.abs(np.diff(distance, axis=1))) <= grid.h * (1 + 1e-12)


def test_interface_points_tighten_the_distance():
    grid = Grid.box(33)
    u = cone(grid)
    plain = distance_to_sublevel(grid, u).values
    tight = distance_to_sublevel(grid, u, include_interface=True).values
    assert np.all(tight <= plain + 1e-15)
    assert np.any(tight < plain)


def test_distance_options():
    grid = Grid.box(17)
    u = np.full(grid.shape, 2.0)
    assert np.all(np.isinf(distance_to_sublevel(grid, u).values))
    with pytest.raises(ValueError):
        distance_to_sublevel(grid, u, method="fast_marching")
    with pytest.raises(ValueError):
        distance_to_sublevel(grid, u, include_interface=True, method="two_pass")
