# test_metrics.py - Cost, MSE and consensus metrics
import cmath
import math

import numpy as np
import pytest

from src.core.exceptions import DimensionMismatchError
from src.core.measurement import AreaMeasurement, SelectionMask
from src.core.power_flow import evaluate_f
from src.estimation.information import area_cost
from src.services.metrics import (
    CSV_HEADER,
    NETWORK_AGENT,
    MetricsRow,
    compute_metrics,
    network_rows,
    polar,
    state_errors,
    wrap_angle,
)


@pytest.fixture
def two_bus_setup(two_bus_grid):
    """Area 0 holds the voltage rows, area 1 everything else; data are noise free."""
    truth = np.array([1.0, 0.97, 0.0, -0.05])
    z = evaluate_f(two_bus_grid, truth)
    rows = np.arange(two_bus_grid.layout.M)
    masks = [
        SelectionMask(0, rows[:4], np.array([]), np.array([]), np.array([])),
        SelectionMask(1, np.array([]), np.array([]), np.array([]), rows[4:]),
    ]
    areas = [AreaMeasurement(m, z[m.rows], np.full(m.size, 1e-4)) for m in masks]
    return two_bus_grid, truth, areas


def _scalar_errors(truth, estimate):
    """Reference loop over buses with complex phasors."""
    N = truth.size // 2
    mse_v = mse_theta = 0.0
    for n in range(N):
        true_phasor = complex(truth[n], truth[N + n])
        hat = complex(estimate[n], estimate[N + n])
        mse_v += (abs(true_phasor) - abs(hat)) ** 2
        d = cmath.phase(true_phasor) - cmath.phase(hat)
        while d <= -math.pi:
            d += 2 * math.pi
        while d > math.pi:
            d -= 2 * math.pi
        mse_theta += d**2
    return mse_v, mse_theta


def test_hand_computed_errors():
    mse_v, mse_theta = state_errors(np.array([1.0, 0.0]), np.array([[0.0, 1.0]]))
    assert mse_v[0] == pytest.approx(0.0)
    assert mse_theta[0] == pytest.approx((math.pi / 2) ** 2)


def test_state_errors_match_scalar_loop():
    rng = np.random.default_rng(77)
    for _ in range(100):
        truth = rng.uniform(-1.2, 1.2, 10)
        estimate = rng.uniform(-1.2, 1.2, 10)
        mse_v, mse_theta = state_errors(truth, estimate[None, :])
        expected_v, expected_theta = _scalar_errors(truth, estimate)
        assert mse_v[0] == pytest.approx(expected_v, abs=1e-12)
        assert mse_theta[0] == pytest.approx(expected_theta, abs=1e-12)


@pytest.mark.parametrize(
    "d, wrapped",
    [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (1.5 * math.pi, -0.5 * math.pi)],
)
def test_wrap_angle(d, wrapped):
    assert wrap_angle(d) == pytest.approx(wrapped)


def test_zero_phasor_has_zero_angle():
    magnitude, angle = polar(np.array([0.0, 0.0]))
    assert magnitude[0] == 0.0
    assert angle[0] == 0.0


def test_truth_gives_zero_errors(two_bus_setup):
    grid, truth, areas = two_bus_setup
    rows = compute_metrics(grid, truth, np.stack([truth, truth]), areas, t=0, k=3)
    assert len(rows) == 3
    for row in rows:
        assert row.mse_v == pytest.approx(0.0, abs=1e-24)
        assert row.mse_theta == pytest.approx(0.0, abs=1e-24)
        assert row.val == pytest.approx(0.0, abs=1e-18)
        assert row.spread == 0.0
        assert row.k == 3


def test_agent_and_network_rows(two_bus_setup):
    grid, truth, areas = two_bus_setup
    delta = np.array([0.0, 0.01, 0.0, 0.02])
    estimates = np.stack([truth, truth + delta])
    rows = compute_metrics(grid, truth, estimates, areas, t=1, k=2, frozen=[False, True])
    agent0, agent1, network = rows

    moved_cost = area_cost(grid, areas[0], truth + delta) + area_cost(grid, areas[1], truth + delta)
    assert agent0.val == pytest.approx(0.0, abs=1e-18)
    assert agent1.val == pytest.approx(moved_cost)
    assert network.agent == NETWORK_AGENT
    assert network.val == pytest.approx(area_cost(grid, areas[1], truth + delta))
    assert agent1.spread == pytest.approx(np.linalg.norm(delta) / 2)
    assert network.spread == pytest.approx(np.linalg.norm(delta))
    assert network.mse_v == pytest.approx(agent0.mse_v + agent1.mse_v)
    assert (agent0.frozen, agent1.frozen, network.frozen) == (0, 1, 1)
    assert network_rows(rows) == [network]


def test_shape_checks(two_bus_setup):
    grid, truth, areas = two_bus_setup
    with pytest.raises(DimensionMismatchError):
        compute_metrics(grid, truth, np.stack([truth]), areas, t=0, k=0)
    with pytest.raises(DimensionMismatchError):
        compute_metrics(grid, truth[:3], np.stack([truth, truth]), areas, t=0, k=0)


def test_csv_row_matches_header():
    row = MetricsRow(0, 1, 2, 3.0, 4.0, 5.0, 6.0, frozen=1, wall_time=9.5)
    assert len(row.csv_row()) == len(CSV_HEADER)
    assert row.csv_row() == (0, 1, 2, 3.0, 4.0, 5.0, 6.0, 1)
