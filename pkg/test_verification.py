"""
Tests for the verification checks on synthetic fields with known answers
"""

import numpy as np
import pytest

from src.discretization import Grid, dirichlet_form
from src.errors import DomainError
from src.freeboundary import attach_gradients, extract_free_boundary
from src.models import SolveRecord
from src.nonlinearity import CriticalCombo, PurePower
from src.verification import (ball_counts, check_aux, check_critical, check_density,
                              check_energy_convergence, check_fb_condition, check_lipschitz,
                              check_nondegeneracy, check_variational_identity, convergence_table,
                              critical_threshold, domain_variation, ring_nu, sobolev_constant,
                              sobolev_quotient, vector_field_catalog)

MODEL = PurePower(p=4.0)


def record(field: np.ndarray, eps: float, level: float = 0.0) -> SolveRecord:
    return SolveRecord(eps=eps, field=field, level=level, sharp_level=level, gradient_norm=0.0,
                       residual=0.0, iterations=0, method="synthetic")


def cone(grid: Grid) -> np.ndarray:
    return np.maximum(2.0 - 2.0 * grid.norm, 0.0)


def planar(grid: Grid, alpha: float = 2.0, beta: float = np.sqrt(2.0)) -> np.ndarray:
    x = grid.points[..., 0]
    return 1.0 + alpha * np.maximum(x, 0.0) - beta * np.maximum(-x, 0.0)


def test_sobolev_constant_and_threshold():
    assert sobolev_constant(3) == pytest.approx(5.4779, abs=1e-3)
    assert critical_threshold(3, 1.0) == pytest.approx(5.4779 ** 1.5 / 3.0, rel=1e-4)
    with pytest.raises(DomainError):
        sobolev_constant(2)
    with pytest.raises(DomainError):
        critical_threshold(3, 0.0)


def test_sobolev_quotient_above_constant():
    grid = Grid.radial(513, 1.0, 3)
    u = (1.0 - grid.coords[0] ** 2) ** 2
    assert sobolev_quotient(grid, u) > sobolev_constant(3)
    with pytest.raises(DomainError):
        sobolev_quotient(grid, grid.zeros())


def test_nondegeneracy_of_cone():
    grid = Grid.box(65)
    u = cone(grid)
    fb = extract_free_boundary(grid, u)
    metrics = check_nondegeneracy(grid, u, interface=fb.points)
    assert metrics.samples > 0
    assert 1.0 <= metrics.c <= 2.5
    assert metrics.passed


def test_quadratic_growth_is_degenerate():
    """u = 1 + (x+)^2 grows like dist^2, so the constant drops to h"""
    grid = Grid.box(65)
    x = grid.points[..., 0]
    metrics = check_nondegeneracy(grid, 1.0 + np.maximum(x, 0.0) ** 2)
    assert metrics.c == pytest.approx(grid.h, rel=1e-6)
    assert not metrics.passed


def test_density_of_half_plane():
    grid = Grid.box(65)
    u = 1.0 + grid.points[..., 0]
    metrics = check_density(grid, u, r0=16)
    assert set(metrics.radii) == {"4h", "8h", "16h"}
    assert 0.3 <= metrics.min_fraction <= metrics.max_fraction <= 0.55
    assert metrics.passed


def test_ball_counts_match_brute_force():
    grid = Grid.box(33)
    u = np.random.default_rng(4).uniform(0.0, 2.0, grid.shape)
    center, r = np.array([0.1, -0.2]), 0.3
    points = grid.points.reshape(-1, 2)
    members = np.sum((points - center) ** 2, axis=-1) <= r * r
    inside, total = ball_counts(grid, u, center, r)
    assert total == int(np.sum(members))
    assert inside == int(np.sum(members & (u.ravel() > 1.0)))


def test_jump_condition_on_exact_profile():
    grid = Grid.box(33)
    u = planar(grid)
    metrics = check_fb_condition(grid, u)
    assert not metrics.trivial
    assert metrics.count > 0
    assert metrics.median_abs <= 1e-10
    assert metrics.passed


def test_jump_condition_flags_wrong_slopes():
    grid = Grid.box(33)
    u = planar(grid, 2.0, 1.0)
    fb = attach_gradients(grid, u, extract_free_boundary(grid, u))
    metrics = check_fb_condition(grid, u, fb)
    assert metrics.median == pytest.approx(1.0, abs=1e-10)
    assert not metrics.passed


def test_jump_condition_on_empty_boundary():
    grid = Grid.box(17)
    metrics = check_fb_condition(grid, grid.zeros())
    assert metrics.trivial
    assert not metrics.passed


@pytest.mark.parametrize("grid", [Grid.box(33), Grid.disk(33), Grid.radial(33, 1.0, 3)],
                         ids=["box", "disk", "radial"])
def test_vector_field_catalog(grid):
    catalog = vector_field_catalog(grid)
    assert len(catalog) == 8
    assert len({field.name for field in catalog}) == 8
    for field in catalog:
        assert np.allclose(field.divergence[~grid.interior], 0.0, atol=1e-10)
        assert field.c1_norm > 0.0
        if grid.kind != "radial":
            assert np.allclose(field.divergence, field.jacobian[0, 0] + field.jacobian[1, 1])


def test_domain_variation_of_zero_field():
    grid = Grid.box(17)
    for field in vector_field_catalog(grid):
        assert domain_variation(grid, MODEL, grid.zeros(), field) == 0.0
        assert domain_variation(grid, MODEL, grid.zeros(), field, eps=0.1) == 0.0


def test_variational_identity_on_zero_records():
    grid = Grid.box(17)
    metrics = check_variational_identity(grid, MODEL, [record(grid.zeros(), 0.2), record(grid.zeros(), 0.1)])
    assert len(metrics.levels) == 2
    assert metrics.max_ratio == 0.0
    assert metrics.passed


def test_energy_sandwich_holds_for_any_field():
    grid = Grid.box(33)
    u = cone(grid)
    metrics = check_energy_convergence(grid, MODEL, [record(u, 0.25), record(u, 0.125)])
    assert metrics.delta == pytest.approx(3.0 * grid.h ** 2 * 4.0)
    assert all(row["pointwise_ok"] for row in metrics.rows)
    assert all(row["gap"] <= row["layer"] + 1e-12 for row in metrics.rows)
    assert metrics.limit_level == metrics.rows[-1]["J_eps"]
    assert metrics.nehari_level is None
    assert metrics.passed


def test_energy_levels_must_approach_the_limit():
    grid = Grid.box(33)
    u = cone(grid)
    too_high = check_energy_convergence(grid, MODEL, [record(1.5 * u, 0.25), record(u, 0.125)])
    assert too_high.limit_sharp_level == pytest.approx(too_high.rows[-1]["J"])
    assert too_high.rows[0]["J_eps"] > too_high.limit_sharp_level + too_high.band + too_high.delta
    assert not too_high.rows[0]["within_limit"] and too_high.rows[1]["within_limit"]
    # the same-field gap is fine for both rows, the verdict is not
    assert all(row["pointwise_ok"] for row in too_high.rows)
    assert not too_high.passed

    too_low = check_energy_convergence(grid, MODEL, [record(grid.zeros(), 0.25), record(u, 0.125)])
    assert not too_low.rows[0]["within_limit"]
    assert not too_low.passed


def test_energy_of_trivial_trace():
    grid = Grid.box(17)
    metrics = check_energy_convergence(grid, MODEL, [record(grid.zeros(), 0.5)])
    assert metrics.rows[0]["J"] == 0.0 and metrics.rows[0]["J_eps"] == 0.0
    assert metrics.passed


def test_lipschitz_ratio_of_repeated_field():
    grid = Grid.box(33)
    u = cone(grid)
    metrics = check_lipschitz(grid, [record(u, 0.2), record(u, 0.1), record(u, 0.05)])
    assert metrics.delta0 == pytest.approx(0.5)
    assert metrics.ratio == pytest.approx(1.0)
    assert metrics.passed


def test_lipschitz_flags_growing_gradient():
    grid = Grid.box(33)
    u = cone(grid)
    metrics = check_lipschitz(grid, [record(u, 0.2), record(u, 0.1), record(2.0 * u, 0.05)])
    assert metrics.ratio == pytest.approx(2.0)
    assert not metrics.passed


def test_aux_on_zero_field():
    grid = Grid.box(17)
    metrics = check_aux(grid, MODEL, grid.zeros())
    assert metrics.harmonic_residual == 0.0
    assert metrics.ring_samples == 0
    assert metrics.passed


def test_aux_flags_negative_values():
    grid = Grid.box(17)
    u = grid.zeros()
    u[8, 8] = -0.5
    metrics = check_aux(grid, MODEL, u)
    assert not metrics.positivity_ok
    assert not metrics.passed


def test_ring_average_of_planar_profile():
    """Average of (2x)+ over a circle of radius r is 2r/pi"""
    grid = Grid.box(65)
    nu, samples = ring_nu(grid, planar(grid), np.array([[0.0, 0.0]]))
    assert samples == 3
    assert nu == pytest.approx(2.0 / np.pi, rel=1e-2)


def test_critical_report():
    grid = Grid.radial(65, 1.0, 3)
    model = CriticalCombo(kappa=0.05, lam=1.0, mu_exponent=3.0, dimension=3)
    u = (1.0 - grid.coords[0] ** 2) ** 2
    report = check_critical(grid, model, [record(u, 0.1, level=1.0)])
    assert report["threshold"] == pytest.approx(critical_threshold(3, 0.05))
    assert report["sobolev_quotient"] > 0.0
    assert report["passed"]
    above = check_critical(grid, model, [record(u, 0.1, level=2.0 * report["threshold"])])
    assert not above["passed"]


def test_convergence_table():
    grid = Grid.box(17)
    u = cone(grid)
    rows = convergence_table(grid, [record(grid.zeros(), 0.2), record(u, 0.1)])
    assert len(rows) == 1
    assert rows[0]["sup_difference"] == pytest.approx(np.max(u))
    assert rows[0]["h1_difference"] == pytest.approx(np.sqrt(dirichlet_form(grid, u, u)))
