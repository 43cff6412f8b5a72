# test_ggn_darse.py - Gossip-based Gauss-Newton and the DARSE snapshot loop
"""
With exact averaging every agent follows the centralized GN iterates; PMU
initialization recovers measured coordinates exactly; agents whose mixed
Hessian is singular keep their iterate.
"""

import numpy as np
import pytest

from src.core.measurement import (
    NoiseSpec,
    SelectionMask,
    build_areas,
    partition_areas,
    select_measurements,
    synthesize_snapshot,
)
from src.estimation.central_estimator import (
    GNOptions,
    covariance_update,
    initial_prior,
    solve_weighted_nlls,
)
from src.estimation.ggn_darse import (
    AgentState,
    DarseConfig,
    ExchangeRule,
    InitMode,
    darse_snapshot,
    darse_track,
    make_agents,
    pmu_init_centralized,
    pmu_init_decentralized,
)
from src.network.gossip import ExactMixer, GossipConfig, SynchronousMixer, UreMixer

NO_STOP = 1e-300


@pytest.fixture(scope="module")
def three_area_setup(ieee14_case, ieee14_grid):
    grid = ieee14_grid
    partition = partition_areas(grid.N, 3, seed=4)
    masks = select_measurements(grid, partition, 0.5, [0, 1, 2], seed=4)
    truth = ieee14_case.operating_state()
    noise = NoiseSpec(base_sigma=1e-3, seed=6)
    snapshots = [synthesize_snapshot(grid, truth, masks, noise, t=t) for t in range(2)]
    return grid, masks, snapshots


def _voltage_agents(values, coverage):
    """Agents holding only voltage rows; ``coverage[i]`` lists agent i's coordinates."""
    agents = []
    for i, coords in enumerate(coverage):
        mask = SelectionMask(i, np.array(coords), np.array([]), np.array([]), np.array([]))
        agents.append(
            AgentState(agent=i, v=np.zeros(values.size), gamma=np.ones(mask.size), mask=mask,
                       c=values[mask.voltage])
        )
    return agents


def test_exact_averaging_matches_centralized_gn(three_area_setup):
    """The central estimator is the oracle for GGN with exact averaging."""
    grid, masks, snapshots = three_area_setup
    snapshot = snapshots[0]
    prior = initial_prior(masks, 1e-3)
    opts = GNOptions(max_iters=8, step_tol=NO_STOP)

    areas = build_areas(masks, snapshot, prior.variances)
    v_central, trace = solve_weighted_nlls(grid, areas, grid.flat_profile, opts)

    config = DarseConfig(updates=8, step_tol=NO_STOP, init_mode="flat", gn=opts)
    agents = make_agents(grid, masks, prior)
    result = darse_snapshot(agents, grid, snapshot, config, ExactMixer())

    for record in trace:
        for i in range(len(masks)):
            np.testing.assert_allclose(result.states[record.k, i], record.state, atol=1e-10)
    central = covariance_update(
        [snapshot.c(i) for i in range(len(masks))], v_central, grid, masks
    )
    for i in range(len(masks)):
        np.testing.assert_allclose(result.covariance.variances[i], central.variances[i], rtol=1e-6)
        np.testing.assert_array_equal(agents[i].gamma, result.covariance.variances[i])


@pytest.mark.parametrize("agent_count", [4, 8])
def test_pmu_init_recovers_measured_coordinates_exactly(agent_count):
    rng = np.random.default_rng(agent_count)
    dim = 20
    values = rng.uniform(0.5, 1.5, dim) * rng.choice([-1.0, 1.0], dim)
    measured = rng.permutation(dim)[:14]
    coverage = np.array_split(measured, agent_count)
    agents = _voltage_agents(values, coverage)
    fallback = [rng.standard_normal(dim) for _ in range(agent_count)]

    states = pmu_init_decentralized(agents, ExactMixer(), rounds=3, s_v=fallback)
    unmeasured = np.setdiff1d(np.arange(dim), measured)
    for state, s in zip(states, fallback):
        np.testing.assert_array_equal(state[measured], values[measured])
        np.testing.assert_array_equal(state[unmeasured], s[unmeasured])


def test_pmu_init_with_full_and_zero_coverage():
    values = np.linspace(0.9, 1.1, 8)
    fallback = [np.full(8, 7.0)] * 4
    full = _voltage_agents(values, np.array_split(np.arange(8), 4))
    for state in pmu_init_decentralized(full, ExactMixer(), 1, fallback):
        np.testing.assert_array_equal(state, values)
    empty = _voltage_agents(values, [[], [], [], []])
    for state in pmu_init_decentralized(empty, ExactMixer(), 1, fallback):
        np.testing.assert_array_equal(state, fallback[0])


def test_pmu_init_centralized_keeps_unmeasured_fallback():
    z = np.array([1.0, 2.0, 3.0])
    out = pmu_init_centralized(z, [True, False, True], [9.0, 9.0, 9.0])
    np.testing.assert_array_equal(out, [1.0, 9.0, 3.0])


def test_singular_agent_freezes(ieee14_grid, ieee14_case):
    """Without mixing, an agent with no measurements cannot take a step."""
    grid = ieee14_grid
    full = select_measurements(grid, partition_areas(grid.N, 1), 1.0, [0])[0]
    empty = SelectionMask(1, np.array([]), np.array([]), np.array([]), np.array([]))
    masks = [full, empty]
    snapshot = synthesize_snapshot(
        grid, ieee14_case.operating_state(), masks, NoiseSpec(base_sigma=1e-3, seed=2)
    )
    agents = make_agents(grid, masks, initial_prior(masks, 1e-3))
    config = DarseConfig(updates=3, exchanges=1, init_mode="flat")
    result = darse_snapshot(agents, grid, snapshot, config, SynchronousMixer(np.eye(2)))

    assert result.frozen[1:, 1].all()
    assert not result.frozen[:, 0].any()
    np.testing.assert_array_equal(result.states[-1, 1], grid.flat_profile)
    assert not np.allclose(result.states[-1, 0], grid.flat_profile)
    assert all(report.frozen == [1] for report in result.reports)


def test_exchanges_for_rules():
    constant = DarseConfig(exchanges=10)
    incrementing = DarseConfig(exchanges=10, exchange_rule=ExchangeRule.INCREMENTING)
    assert [constant.exchanges_for(k) for k in (1, 2, 3)] == [10, 10, 10]
    assert [incrementing.exchanges_for(k) for k in (1, 2, 3)] == [10, 11, 12]


def test_darse_config_validation_and_defaults():
    assert DarseConfig(exchanges=6).pmu_exchanges == 6
    assert DarseConfig(exchanges=6, init_exchanges=2).pmu_exchanges == 2
    assert DarseConfig(init_mode="flat").init_mode is InitMode.FLAT
    assert DarseConfig(singular_policy="freeze").ridge_scale is None
    with pytest.raises(ValueError):
        DarseConfig(updates=0)
    with pytest.raises(ValueError):
        DarseConfig(init_mode="telepathy")


def test_discrepancy_vanishes_with_exact_averaging(three_area_setup):
    grid, masks, snapshots = three_area_setup
    config = DarseConfig(updates=2, init_mode="flat", track_discrepancy=True)
    agents = make_agents(grid, masks, initial_prior(masks, 1e-3))
    result = darse_snapshot(agents, grid, snapshots[0], config, ExactMixer())
    for report in result.reports:
        assert set(report.discrepancies) <= {0, 1, 2}
        for value in report.discrepancies.values():
            assert value == pytest.approx(0.0, abs=1e-8)


def test_gossip_run_records_exchange_counts(three_area_setup):
    grid, masks, snapshots = three_area_setup
    config = DarseConfig(updates=3, exchanges=4, exchange_rule="incrementing")
    mixer = UreMixer(GossipConfig(agent_count=3, seed=5))
    agents = make_agents(grid, masks, initial_prior(masks, 1e-3))
    result = darse_snapshot(agents, grid, snapshots[0], config, mixer)
    assert result.exchanges_per_update == [0, 4, 5, 6]
    assert result.states.shape == (4, 3, 2 * grid.N)
    assert len(mixer.schedule.slice(0, 0)) == config.pmu_exchanges
    assert np.all(np.isfinite(result.final_states))


def test_darse_track_carries_weights_between_snapshots(three_area_setup):
    grid, masks, snapshots = three_area_setup
    config = DarseConfig(updates=4, init_mode="flat")
    agents = make_agents(grid, masks, initial_prior(masks, 1e-3))
    results = darse_track(agents, grid, snapshots, config, ExactMixer())
    assert [r.t for r in results] == [0, 1]
    for i, agent in enumerate(agents):
        np.testing.assert_array_equal(agent.gamma, results[-1].covariance.variances[i])
        np.testing.assert_array_equal(agent.v, results[-1].final_states[i])
    with pytest.raises(ValueError):
        darse_track(agents, grid, [], config, ExactMixer())


def test_ridge_policy_steps_rank_deficient_agent_and_tracks_discrepancy(ieee14_grid, ieee14_case):
    """Three voltage rows give a rank-deficient Hessian: frozen by default, ridged on request."""
    grid = ieee14_grid
    full = select_measurements(grid, partition_areas(grid.N, 1), 1.0, [0])[0]
    partial = SelectionMask(1, np.array([0, 1, 2]), np.array([]), np.array([]), np.array([]))
    masks = [full, partial]
    snapshot = synthesize_snapshot(
        grid, ieee14_case.operating_state(), masks, NoiseSpec(base_sigma=1e-3, seed=2)
    )
    no_mixing = SynchronousMixer(np.eye(2))

    frozen_config = DarseConfig(updates=1, init_mode="flat", track_discrepancy=True)
    agents = make_agents(grid, masks, initial_prior(masks, 1e-3))
    frozen = darse_snapshot(agents, grid, snapshot, frozen_config, no_mixing)
    assert frozen.reports[0].frozen == [1]
    assert set(frozen.reports[0].discrepancies) == {0}

    ridge_config = DarseConfig(
        updates=1, init_mode="flat", singular_policy="ridge", track_discrepancy=True
    )
    agents = make_agents(grid, masks, initial_prior(masks, 1e-3))
    ridged = darse_snapshot(agents, grid, snapshot, ridge_config, no_mixing)
    report = ridged.reports[0]
    assert report.frozen == []
    assert set(report.discrepancies) == {0, 1}
    assert all(np.isfinite(value) for value in report.discrepancies.values())
    moved = ridged.states[1, 1] - ridged.states[0, 1]
    assert np.any(moved[:3] != 0)
    np.testing.assert_array_equal(moved[3:], 0.0)
