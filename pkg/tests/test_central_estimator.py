# test_central_estimator.py - Centralized weighted Gauss-Newton and ARSE
"""
Weighted GN on noise-free data recovers the true state; the ARSE covariance
update floors tiny residuals and inflates the variances of bad entries.
"""

import numpy as np
import pytest

from src.core.exceptions import DimensionMismatchError, SingularHessianError
from src.core.measurement import (
    AreaMeasurement,
    NoiseSpec,
    SelectionMask,
    build_areas,
    partition_areas,
    prior_gammas,
    select_measurements,
    synthesize_snapshot,
)
from src.estimation.central_estimator import (
    CovarianceEstimate,
    GNOptions,
    arse_step,
    covariance_update,
    gn_step,
    initial_prior,
    project_state,
    solve_weighted_nlls,
)


@pytest.fixture(scope="module")
def full_setup(ieee14_case, ieee14_grid):
    """Single area that keeps every row of IEEE-14."""
    partition = partition_areas(ieee14_grid.N, 1)
    masks = select_measurements(ieee14_grid, partition, 1.0, [0])
    return ieee14_case.operating_state(), ieee14_grid, masks


def test_noise_free_gn_recovers_truth(full_setup):
    truth, grid, masks = full_setup
    snapshot = synthesize_snapshot(grid, truth, masks, NoiseSpec(base_sigma=0.0))
    prior = initial_prior(masks, 1e-3)
    areas = build_areas(masks, snapshot, prior.variances)
    v, trace = solve_weighted_nlls(grid, areas, grid.flat_profile, GNOptions())
    np.testing.assert_allclose(v, truth, atol=1e-8)
    assert trace[0].k == 0
    assert trace[-1].cost < trace[0].cost
    assert trace[-1].cost == pytest.approx(0.0, abs=1e-6)


def test_gn_step_reports_step_norm(full_setup):
    truth, grid, masks = full_setup
    snapshot = synthesize_snapshot(grid, truth, masks, NoiseSpec(base_sigma=0.0))
    areas = build_areas(masks, snapshot, initial_prior(masks, 1e-3).variances)
    step = gn_step(grid, areas, grid.flat_profile, GNOptions())
    assert step.step_norm == pytest.approx(np.linalg.norm(step.v_next - grid.flat_profile))
    assert step.Q.shape == (2 * grid.N, 2 * grid.N)
    np.testing.assert_allclose(step.Q, step.Q.T)


def test_empty_measurements_are_singular(ieee14_grid):
    empty = SelectionMask(0, np.array([]), np.array([]), np.array([]), np.array([]))
    areas = [AreaMeasurement(empty, np.zeros(0), np.zeros(0))]
    with pytest.raises(SingularHessianError):
        gn_step(ieee14_grid, areas, ieee14_grid.flat_profile, GNOptions())


def test_covariance_update_floors_small_residuals(two_bus_grid):
    """Voltage rows measure v directly, so residuals are c - v."""
    v_hat = np.array([1.0, 0.9, 0.0, -0.1])
    mask = SelectionMask(0, np.arange(4), np.array([]), np.array([]), np.array([]))
    c = v_hat + np.array([0.1, 0.0, -0.2, 1e-6])
    estimate = covariance_update([c], v_hat, two_bus_grid, [mask], floor=1e-8)
    np.testing.assert_allclose(estimate.variances[0], [0.01, 1e-8, 0.04, 1e-8], rtol=1e-9)


def test_covariance_update_checks_lengths(two_bus_grid):
    mask = SelectionMask(0, np.arange(4), np.array([]), np.array([]), np.array([]))
    with pytest.raises(DimensionMismatchError):
        covariance_update([], two_bus_grid.flat_profile, two_bus_grid, [mask])


def test_arse_inflates_bad_entry_variances(full_setup):
    truth, grid, masks = full_setup
    noise = NoiseSpec(base_sigma=1e-3, bad_count=3, bad_variance_factor=1e4, seed=21)
    snapshot = synthesize_snapshot(grid, truth, masks, noise)
    prior = initial_prior(masks, 1e-3)
    result = arse_step(prior, snapshot, grid, masks, GNOptions(), grid.flat_profile)
    rows = masks[0].rows
    variances = result.covariance.variances[0]
    is_bad = np.isin(rows, snapshot.bad_rows)
    assert variances[is_bad].mean() > 10 * variances[~is_bad].mean()


def test_arse_without_reweighting_keeps_prior(full_setup):
    truth, grid, masks = full_setup
    snapshot = synthesize_snapshot(grid, truth, masks, NoiseSpec(base_sigma=1e-3, seed=3))
    prior = initial_prior(masks, 1e-3)
    result = arse_step(prior, snapshot, grid, masks, GNOptions(), grid.flat_profile, reweight=False)
    assert result.covariance is prior


def test_second_pass_extends_the_trace(full_setup):
    truth, grid, masks = full_setup
    snapshot = synthesize_snapshot(grid, truth, masks, NoiseSpec(base_sigma=1e-3, seed=8))
    prior = initial_prior(masks, 1e-3)
    single = arse_step(prior, snapshot, grid, masks, GNOptions(), grid.flat_profile)
    double = arse_step(
        prior, snapshot, grid, masks, GNOptions(second_pass=True), grid.flat_profile
    )
    ks = [record.k for record in double.trace]
    assert ks == sorted(set(ks))
    assert len(double.trace) >= len(single.trace)


def test_project_state_clamps_to_box():
    np.testing.assert_array_equal(project_state([3.0, -5.0, 0.5], 2.0), [2.0, -2.0, 0.5])


@pytest.mark.parametrize("field", ["max_iters", "step_tol", "v_max", "covariance_floor"])
def test_gn_options_reject_non_positive(field):
    with pytest.raises(ValueError):
        GNOptions(**{field: 0})


def test_prior_respects_floor():
    mask = SelectionMask(0, np.arange(3), np.array([]), np.array([]), np.array([]))
    prior = CovarianceEstimate.prior([mask], sigma=0.0, floor=1e-8)
    np.testing.assert_array_equal(prior.variances[0], np.full(3, 1e-8))


def test_prior_builders_agree():
    masks = [
        SelectionMask(0, np.arange(3), np.array([]), np.array([]), np.array([])),
        SelectionMask(1, np.array([4]), np.array([]), np.array([]), np.array([7, 9])),
    ]
    gammas = prior_gammas(masks, 1e-3, 1e-8)
    by_class = CovarianceEstimate.prior(masks, 1e-3, 1e-8)
    by_options = initial_prior(masks, 1e-3, GNOptions(covariance_floor=1e-8))
    for expected, left, right in zip(gammas, by_class.variances, by_options.variances):
        np.testing.assert_array_equal(left, expected)
        np.testing.assert_array_equal(right, expected)
    assert [g.size for g in gammas] == [3, 3]
    np.testing.assert_allclose(gammas[0], 1e-6)
