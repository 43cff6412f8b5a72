# test_baseline_diffusion.py - First-order diffusion baseline
import numpy as np
import pytest

from src.core.exceptions import DimensionMismatchError
from src.core.measurement import AreaMeasurement, SelectionMask
from src.core.power_flow import evaluate_f, jacobian
from src.estimation.baseline_diffusion import (
    DiffusionConfig,
    diffusion_round,
    local_gradient,
    run_diffusion,
)
from src.estimation.information import area_cost


@pytest.fixture
def small_problem(make_grid, rng):
    """Random 5-bus grid split into two areas with all their rows."""
    grid = make_grid(5, seed=3)
    truth = grid.flat_profile + 0.05 * rng.standard_normal(2 * grid.N)
    z = evaluate_f(grid, truth)
    rows = np.arange(grid.layout.M)
    halves = np.array_split(rows, 2)
    areas = []
    for i, part in enumerate(halves):
        mask = SelectionMask(i, part[part < 2 * grid.N], np.array([]), np.array([]),
                             part[part >= 2 * grid.N])
        areas.append(AreaMeasurement(mask, z[mask.rows], np.full(mask.size, 0.01)))
    return grid, areas, truth


def test_step_size_decays():
    config = DiffusionConfig(alpha0=0.5, rounds=3)
    assert [config.step_size(ell) for ell in (1, 2, 4)] == [0.5, 0.25, 0.125]


@pytest.mark.parametrize("alpha0", [0.0, -0.1])
def test_alpha0_must_be_positive(alpha0):
    with pytest.raises(ValueError):
        DiffusionConfig(alpha0=alpha0)


def test_local_gradient_is_half_the_negative_cost_gradient(small_problem, rng):
    grid, areas, truth = small_problem
    area = areas[0]
    v = truth + 0.02 * rng.standard_normal(truth.size)
    numeric = np.zeros(v.size)
    h = 1e-6
    for j in range(v.size):
        step = np.zeros(v.size)
        step[j] = h
        numeric[j] = (area_cost(grid, area, v + step) - area_cost(grid, area, v - step)) / (2 * h)
    np.testing.assert_allclose(local_gradient(grid, area, v), -0.5 * numeric, rtol=1e-5, atol=1e-6)


def test_zero_step_with_identity_mixing_changes_nothing(small_problem, rng):
    grid, areas, _ = small_problem
    iterates = 0.9 + 0.01 * rng.standard_normal((2, 2 * grid.N))
    out = diffusion_round(iterates, np.eye(2), grid, areas, alpha=0.0)
    np.testing.assert_array_equal(out, iterates)


def test_zero_step_preserves_the_mean(small_problem, rng):
    grid, areas, _ = small_problem
    iterates = 0.9 + 0.01 * rng.standard_normal((2, 2 * grid.N))
    W = np.array([[0.7, 0.3], [0.3, 0.7]])
    out = diffusion_round(iterates, W, grid, areas, alpha=0.0)
    np.testing.assert_allclose(out.mean(axis=0), iterates.mean(axis=0))


def test_round_checks_dimensions(small_problem):
    grid, areas, _ = small_problem
    with pytest.raises(DimensionMismatchError):
        diffusion_round(np.zeros((3, 2 * grid.N)), np.eye(2), grid, areas, 0.1)


def test_run_keeps_full_history_and_descends(small_problem):
    """From a common start the first round moves the mean along the total gradient."""
    grid, areas, truth = small_problem
    start = truth + 0.01
    F = np.vstack([jacobian(grid, start, a.rows) * a.scale[:, None] for a in areas])
    config = DiffusionConfig(alpha0=0.5 / np.linalg.norm(F, 2) ** 2, rounds=15)
    W = np.full((2, 2), 0.5)
    history = run_diffusion(grid, areas, W, np.tile(start, (2, 1)), config)
    assert len(history) == 16
    assert all(np.all(np.isfinite(h)) for h in history)
    before = sum(area_cost(grid, a, start) for a in areas)
    after = sum(area_cost(grid, a, history[1].mean(axis=0)) for a in areas)
    assert after < before
