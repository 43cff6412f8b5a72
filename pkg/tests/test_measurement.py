# test_measurement.py - Partitions, selection masks and noisy snapshots
"""
Areas are random but seeded; selection keeps a rounded fraction of each
area's own SCADA rows and all own PMU rows in PMU areas; snapshots add
Gaussian noise with variance-inflated bad entries.
"""

import numpy as np
import pytest

from src.core.exceptions import DimensionMismatchError, NonPositiveWeightError
from src.core.grid_model import MeasurementCategory
from src.core.measurement import (
    AreaMeasurement,
    NoiseSpec,
    OwnershipPolicy,
    SelectionMask,
    partition_areas,
    select_measurements,
    synthesize_snapshot,
    whiten_area,
)
from src.core.power_flow import evaluate_f


@pytest.fixture(scope="module")
def ieee14_setup(ieee14_case, ieee14_grid):
    partition = partition_areas(ieee14_grid.N, 3, seed=5)
    masks = select_measurements(ieee14_grid, partition, 0.5, [0, 1], seed=5)
    return ieee14_case, ieee14_grid, partition, masks


def test_partition_sizes_match_the_ieee118_layout():
    """118 buses into 10 areas: nine areas of 12 and one of 10."""
    partition = partition_areas(118, 10, seed=3)
    assert partition.sizes == [12] * 9 + [10]
    assert sorted(np.concatenate(partition.area_buses).tolist()) == list(range(118))


def test_partition_falls_back_to_even_split():
    """When ceil(N/I) leaves the last area empty the split is as even as possible."""
    partition = partition_areas(5, 4, seed=0)
    assert sorted(partition.sizes, reverse=True) == [2, 1, 1, 1]


def test_partition_is_seeded():
    first = partition_areas(30, 4, seed=11)
    second = partition_areas(30, 4, seed=11)
    other = partition_areas(30, 4, seed=12)
    np.testing.assert_array_equal(first.bus_area, second.bus_area)
    assert not np.array_equal(first.bus_area, other.bus_area)


@pytest.mark.parametrize("areas", [0, 15])
def test_partition_rejects_bad_area_counts(areas):
    with pytest.raises(ValueError):
        partition_areas(14, areas)


def test_pmu_rows_confined_to_pmu_areas(ieee14_setup):
    """Only areas listed as PMU areas carry voltage and current rows."""
    _, grid, partition, masks = ieee14_setup
    N = grid.N
    for mask in masks:
        buses = partition.area_buses[mask.area]
        if mask.area in (0, 1):
            expected = set(buses.tolist()) | set((buses + N).tolist())
            assert set(mask.voltage.tolist()) == expected
            assert mask.current.size > 0 or grid.E == 0
        else:
            assert mask.voltage.size == 0
            assert mask.current.size == 0


def test_selection_keeps_rounded_fraction_of_owned_scada(ieee14_setup):
    _, grid, partition, masks = ieee14_setup
    row_area = partition.row_areas(grid)
    category = grid.forms.category
    scada = (category == MeasurementCategory.INJECTION) | (category == MeasurementCategory.FLOW)
    for mask in masks:
        owned = int(np.sum(scada & (row_area == mask.area)))
        assert mask.injection.size + mask.flow.size == int(np.floor(0.5 * owned + 0.5))
        assert np.all(category[mask.injection] == MeasurementCategory.INJECTION)
        assert np.all(category[mask.flow] == MeasurementCategory.FLOW)


def test_masks_are_disjoint_across_areas(ieee14_setup):
    _, _, _, masks = ieee14_setup
    rows = np.concatenate([mask.rows for mask in masks])
    assert np.unique(rows).size == rows.size


def test_lower_index_ownership_moves_line_rows(ieee14_grid):
    """Under LOWER_INDEX_BUS both directions of a line belong to the same area."""
    partition = partition_areas(ieee14_grid.N, 4, seed=2)
    forms = ieee14_grid.forms
    areas = partition.row_areas(ieee14_grid, OwnershipPolicy.LOWER_INDEX_BUS)
    for row in np.flatnonzero(forms.far >= 0):
        low = min(forms.owner[row], forms.far[row])
        assert areas[row] == partition.bus_area[low]


def test_selector_picks_kept_rows(ieee14_setup, rng):
    _, grid, _, masks = ieee14_setup
    z = rng.standard_normal(grid.layout.M)
    for mask in masks:
        T = mask.selector(grid.layout.M)
        np.testing.assert_array_equal(T @ z, z[mask.rows])


def test_selection_mask_rejects_duplicates():
    with pytest.raises(ValueError):
        SelectionMask(0, np.array([1, 1]), np.array([]), np.array([]), np.array([]))


def test_noise_free_snapshot_equals_measurement_function(ieee14_setup):
    case, grid, _, masks = ieee14_setup
    truth = case.operating_state()
    snapshot = synthesize_snapshot(grid, truth, masks, NoiseSpec(base_sigma=0.0))
    np.testing.assert_array_equal(snapshot.z, evaluate_f(grid, truth))
    assert snapshot.bad_rows.size == 0


def test_noise_has_configured_scale(ieee14_setup):
    case, grid, _, masks = ieee14_setup
    truth = case.operating_state()
    sigma = 1e-2
    snapshot = synthesize_snapshot(grid, truth, masks, NoiseSpec(base_sigma=sigma, seed=4))
    standardized = (snapshot.z - evaluate_f(grid, truth)) / sigma
    assert 0.8 < np.std(standardized) < 1.2


def test_bad_entries_are_inflated_and_selected(ieee14_setup):
    case, grid, _, masks = ieee14_setup
    noise = NoiseSpec(base_sigma=1e-3, bad_count=5, bad_variance_factor=100.0, seed=9)
    snapshot = synthesize_snapshot(grid, case.operating_state(), masks, noise, t=2)
    selected = set(np.concatenate([m.rows for m in masks]).tolist())
    assert snapshot.bad_rows.size == 5
    assert set(snapshot.bad_rows.tolist()) <= selected
    assert snapshot.variances[snapshot.bad_rows] == pytest.approx(100.0 * 1e-6)
    good = np.setdiff1d(np.arange(grid.layout.M), snapshot.bad_rows)
    assert np.all(snapshot.variances[good] == pytest.approx(1e-6))


def test_persistent_bad_rows_repeat_over_snapshots(ieee14_setup):
    case, grid, _, masks = ieee14_setup
    truth = case.operating_state()
    persistent = NoiseSpec(base_sigma=1e-3, bad_count=4, persistent=True, seed=1)
    first = synthesize_snapshot(grid, truth, masks, persistent, t=0)
    later = synthesize_snapshot(grid, truth, masks, persistent, t=3)
    np.testing.assert_array_equal(first.bad_rows, later.bad_rows)
    assert not np.array_equal(first.z, later.z)


def test_too_many_bad_entries_raise(ieee14_setup):
    case, grid, _, masks = ieee14_setup
    total = sum(m.size for m in masks)
    with pytest.raises(ValueError):
        synthesize_snapshot(
            grid, case.operating_state(), masks, NoiseSpec(base_sigma=1e-3, bad_count=total + 1)
        )


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(base_sigma=-1.0)
    with pytest.raises(ValueError):
        NoiseSpec(base_sigma=1.0, bad_count=-1)


def test_whiten_area_scales_by_inverse_std():
    c_tilde, ok = whiten_area([2.0, 3.0], [4.0, 9.0])
    assert ok
    np.testing.assert_allclose(c_tilde, [1.0, 1.0])


@pytest.mark.parametrize("gamma", [[1.0, 0.0], [1.0, -2.0], [1.0, np.inf]])
def test_whiten_area_rejects_bad_weights(gamma):
    with pytest.raises(NonPositiveWeightError):
        whiten_area([1.0, 1.0], gamma)


def test_area_measurement_checks_lengths():
    mask = SelectionMask(0, np.array([0, 1]), np.array([]), np.array([]), np.array([]))
    with pytest.raises(DimensionMismatchError):
        AreaMeasurement(mask, np.zeros(3), np.ones(2))
