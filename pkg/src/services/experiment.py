# src/services/experiment.py - Experiment orchestration, paired comparison, constants report
"""Pipeline: case -> grid -> partition -> selection -> trajectory -> snapshots
-> gossip schedule, then one or more algorithms over those frozen inputs.

Every algorithm of one run reads the same ``PreparedRun``; the replay bundle
written next to the results holds exactly those inputs.
"""
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import networkx as nx
import numpy as np

from config.config import config
from src.core.exceptions import DimensionMismatchError, ScenarioError
from src.core.grid_model import GridModel, MeasurementCategory
from src.core.measurement import (
    AreaMeasurement,
    AreaPartition,
    NoiseSpec,
    OwnershipPolicy,
    SelectionMask,
    Snapshot,
    build_areas,
    instrumented_coordinates,
    partition_areas,
    prior_gammas,
    select_measurements,
    synthesize_snapshot,
)
from src.core.power_flow import lipschitz_constant
from src.data.case_parser import CaseFile, parse_case
from src.data.replay import ReplayBundle, write_bundle
from src.data.results import write_csv, write_json
from src.estimation.baseline_diffusion import DiffusionConfig, run_diffusion
from src.estimation.central_estimator import arse_step, initial_prior
from src.estimation.convergence import (
    StateSampler,
    condition3_schedule,
    estimate_condition2,
    payload_bits,
    theorem1_bounds,
)
from src.estimation.ggn_darse import (
    DarseConfig,
    Mixer,
    darse_snapshot,
    make_agents,
    pmu_init_centralized,
)
from src.estimation.information import weighted_cost
from src.network.gossip import (
    ExactMixer,
    GossipConfig,
    GraphSequence,
    SynchronousMixer,
    UreMixer,
    generate_schedule,
    smallest_window,
    synchronous_weight_matrix,
    verify_condition1,
)
from src.services.metrics import CSV_HEADER, MetricsRow, compute_metrics
from src.services.scenario import ALGORITHMS, Scenario
from src.services.trajectory import make_trajectory
from src.utils.lock import run_lock
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)

REPLAY_DIR = "replay"
SUMMARY_FILE = "summary.json"
METRICS_FILE = "metrics.csv"
FIGURE_FILES = {
    "val": "figure_cost.csv",
    "mse_v": "figure_mse_v.csv",
    "mse_theta": "figure_mse_theta.csv",
}
FIGURE_HEADER = ("algorithm", "t", "k", "exchange", "value")
MATCH_TOLERANCE = 0.01
SUPPRESSION_SHARE = (5, 6)


@dataclass
class PreparedRun:
    scenario: Scenario
    case: CaseFile
    grid: GridModel
    partition: AreaPartition
    masks: List[SelectionMask]
    snapshots: List[Snapshot]
    gossip: GossipConfig
    schedule: GraphSequence

    @property
    def darse_config(self) -> DarseConfig:
        return self.scenario.darse.to_config(self.scenario.gn.to_options())

    def bundle(self) -> ReplayBundle:
        return ReplayBundle(
            scenario=self.scenario.echo(),
            partition=self.partition,
            masks=self.masks,
            snapshots=self.snapshots,
            schedule=self.schedule,
        )

    def reference_areas(self, snapshot: Snapshot) -> List[AreaMeasurement]:
        """Areas weighted by the base variance; shared yardstick across algorithms."""
        gammas = prior_gammas(self.masks, self.scenario.sigma, self.scenario.gn.covariance_floor)
        return build_areas(self.masks, snapshot, gammas)

    def pmu_vector(self, snapshot: Snapshot) -> np.ndarray:
        """Selected voltage-phasor readings scattered onto state coordinates."""
        z_v = np.zeros(2 * self.grid.N)
        for mask in self.masks:
            z_v[mask.voltage] = snapshot.z[mask.voltage]
        return z_v


@dataclass
class SnapshotSummary:
    t: int
    updates: int
    exchanges: int
    final_val: float
    final_val_ref: List[float]
    final_mse_v: float
    final_mse_theta: float
    frozen_agent_updates: int
    wall_time: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class AlgorithmRun:
    label: str
    algorithm: str
    rows: List[MetricsRow] = field(default_factory=list)
    snapshots: List[SnapshotSummary] = field(default_factory=list)
    exchange_axis: Dict[int, List[int]] = field(default_factory=dict)
    wall_time: float = 0.0

    def network_rows(self) -> List[MetricsRow]:
        return [row for row in self.rows if row.is_network]

    def summary(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "wall_time": self.wall_time,
            "snapshots": [s.to_dict() for s in self.snapshots],
        }


@dataclass
class ExperimentResult:
    scenario: Scenario
    runs: List[AlgorithmRun]
    replay_hashes: Dict[str, str] = field(default_factory=dict)
    checks: Dict[str, Any] = field(default_factory=dict)
    out_dir: Optional[Path] = None

    def run(self, label: str) -> AlgorithmRun:
        for run in self.runs:
            if run.label == label:
                return run
        raise KeyError(label)

    def summary(self, case: CaseFile) -> Dict[str, Any]:
        return {
            "schema_version": config.schema_version,
            "version": config.app_version,
            "scenario": self.scenario.echo(),
            "case": {
                "name": case.name,
                "N": case.N,
                "E": case.E,
                "unsupported": [f.to_dict() for f in case.unsupported],
            },
            "replay_hashes": self.replay_hashes,
            "runs": {run.label: run.summary() for run in self.runs},
            "checks": self.checks,
        }


def gossip_config(scenario: Scenario) -> GossipConfig:
    overlay = None
    if scenario.gossip.overlay_edges is not None:
        overlay = nx.Graph()
        overlay.add_nodes_from(range(scenario.areas))
        overlay.add_edges_from(scenario.gossip.overlay_edges)
    return GossipConfig(
        agent_count=scenario.areas,
        beta=scenario.gossip.beta,
        overlay=overlay,
        link_failure_p=scenario.gossip.link_failure_p,
        seed=scenario.seed,
    )


def build_schedule(gossip: GossipConfig, darse: DarseConfig, snapshots: int) -> GraphSequence:
    """All exchange events of a run: slot k = 0 feeds the PMU initializer."""
    schedule = GraphSequence(gossip.agent_count)
    for t in range(snapshots):
        schedule.add(t, 0, generate_schedule(gossip, 0, darse.pmu_exchanges, t=t))
        for k in range(1, darse.updates + 1):
            schedule.add(t, k, generate_schedule(gossip, k, darse.exchanges_for(k), t=t))
    return schedule


def prepare(scenario: Scenario, bundle: Optional[ReplayBundle] = None) -> PreparedRun:
    """Build (or reload from ``bundle``) every input the algorithms share."""
    case = parse_case(scenario.case)
    grid = case.to_grid(scenario.convention)
    gossip = gossip_config(scenario)
    if scenario.areas > grid.N:
        raise ScenarioError(f"{scenario.areas} areas for a {grid.N}-bus case")

    if bundle is not None:
        partition, masks, snapshots, schedule = (
            bundle.partition,
            bundle.masks,
            bundle.snapshots,
            bundle.schedule,
        )
        for snapshot in snapshots:
            if snapshot.z.size != grid.layout.M:
                raise DimensionMismatchError(
                    f"replayed snapshot t={snapshot.t} has {snapshot.z.size} entries, "
                    f"case '{case.name}' needs {grid.layout.M}"
                )
    else:
        seed = scenario.seed
        partition = partition_areas(grid.N, scenario.areas, seed=seed)
        masks = select_measurements(
            grid,
            partition,
            scenario.measurement_fraction,
            scenario.pmu_areas,
            seed=seed,
            policy=OwnershipPolicy(scenario.ownership),
        )
        truths = make_trajectory(
            case, scenario.trajectory, scenario.snapshots, seed, scenario.trajectory_amplitude
        )
        noise = NoiseSpec(
            base_sigma=scenario.sigma,
            bad_count=scenario.bad_count,
            bad_variance_factor=scenario.bad_factor,
            persistent=scenario.bad_persistent,
            seed=seed,
        )
        try:
            snapshots = [
                synthesize_snapshot(grid, truth, masks, noise, t=t)
                for t, truth in enumerate(truths)
            ]
        except ValueError as e:
            raise ScenarioError(str(e)) from e
        darse = scenario.darse.to_config(scenario.gn.to_options())
        if scenario.gossip.mode == "ure":
            schedule = build_schedule(gossip, darse, len(snapshots))
        else:
            schedule = GraphSequence(gossip.agent_count)
    logger.info(
        f"Prepared '{scenario.name}': case {case.name} (N={grid.N}, E={grid.E}), "
        f"I={scenario.areas}, T={len(snapshots)}, seed={scenario.seed}"
    )
    return PreparedRun(scenario, case, grid, partition, masks, snapshots, gossip, schedule)


def make_mixer(prepared: PreparedRun) -> Mixer:
    mode = prepared.scenario.gossip.mode
    if mode == "exact":
        return ExactMixer()
    if mode == "synchronous":
        return SynchronousMixer(diffusion_weights(prepared))
    return UreMixer(prepared.gossip, prepared.schedule)


def diffusion_weights(prepared: PreparedRun) -> np.ndarray:
    return synchronous_weight_matrix(prepared.gossip.adjacency(), prepared.scenario.gossip.alpha)


def _reference_costs(prepared: PreparedRun, snapshot: Snapshot, states: np.ndarray) -> List[float]:
    areas = prepared.reference_areas(snapshot)
    return [weighted_cost(prepared.grid, areas, v) for v in states]


def _summarize(
    prepared: PreparedRun,
    snapshot: Snapshot,
    rows: Sequence[MetricsRow],
    final_states: np.ndarray,
    updates: int,
    exchanges: int,
    frozen: int,
    elapsed: float,
) -> SnapshotSummary:
    final = rows[-1]
    return SnapshotSummary(
        t=snapshot.t,
        updates=updates,
        exchanges=exchanges,
        final_val=final.val,
        final_val_ref=_reference_costs(prepared, snapshot, final_states),
        final_mse_v=final.mse_v,
        final_mse_theta=final.mse_theta,
        frozen_agent_updates=frozen,
        wall_time=elapsed,
    )


def _exchange_axis(darse: DarseConfig) -> List[int]:
    return [0] + list(np.cumsum([darse.exchanges_for(k) for k in range(1, darse.updates + 1)]))


def run_darse(prepared: PreparedRun) -> AlgorithmRun:
    scenario = prepared.scenario
    darse = prepared.darse_config
    grid = prepared.grid
    mixer = make_mixer(prepared)
    agents = make_agents(grid, prepared.masks, initial_prior(prepared.masks, scenario.sigma, darse.gn))
    run = AlgorithmRun(label="darse", algorithm="darse")
    started = time.perf_counter()
    for snapshot in prepared.snapshots:
        gammas = [agent.gamma.copy() for agent in agents]
        tick = time.perf_counter()
        result = darse_snapshot(agents, grid, snapshot, darse, mixer)
        elapsed = time.perf_counter() - tick
        areas = build_areas(prepared.masks, snapshot, gammas)
        rows = []
        for k, states in enumerate(result.states):
            rows.extend(
                compute_metrics(
                    grid, snapshot.true_state, states, areas, snapshot.t, k, result.frozen[k], elapsed
                )
            )
        run.rows.extend(rows)
        run.exchange_axis[snapshot.t] = _exchange_axis(darse)
        run.snapshots.append(
            _summarize(
                prepared,
                snapshot,
                rows,
                result.final_states,
                darse.updates,
                sum(result.exchanges_per_update),
                int(result.frozen.sum()),
                elapsed,
            )
        )
        logger.info(
            f"darse t={snapshot.t}: val={rows[-1].val:.6e} mse_v={rows[-1].mse_v:.3e} "
            f"mse_theta={rows[-1].mse_theta:.3e}"
        )
    run.wall_time = time.perf_counter() - started
    return run


def run_central(prepared: PreparedRun, reweight: bool = True) -> AlgorithmRun:
    """Centralized (AR)SE; the single estimate is replicated to every area for metrics."""
    scenario = prepared.scenario
    opts = scenario.gn.to_options()
    grid = prepared.grid
    label = "central_gn" if reweight else "central_gn_noreweight"
    run = AlgorithmRun(label=label, algorithm=label)
    covariance = initial_prior(prepared.masks, scenario.sigma, opts)
    covered = instrumented_coordinates(grid, prepared.masks)
    previous = grid.flat_profile
    axis = _exchange_axis(prepared.darse_config)
    started = time.perf_counter()
    for snapshot in prepared.snapshots:
        start = previous if opts.warm_start else grid.flat_profile
        v_init = pmu_init_centralized(prepared.pmu_vector(snapshot), covered, start)
        areas = build_areas(prepared.masks, snapshot, covariance.variances)
        tick = time.perf_counter()
        result = arse_step(covariance, snapshot, grid, prepared.masks, opts, v_init, reweight)
        elapsed = time.perf_counter() - tick
        states = [record.state for record in result.trace]
        # pad to the DARSE update count so both share the k axis
        while len(states) < len(axis):
            states.append(states[-1])
        rows = []
        for k, state in enumerate(states):
            estimates = np.tile(state, (scenario.areas, 1))
            rows.extend(
                compute_metrics(grid, snapshot.true_state, estimates, areas, snapshot.t, k, None, elapsed)
            )
        run.rows.extend(rows)
        run.exchange_axis[snapshot.t] = axis + [axis[-1]] * (len(states) - len(axis))
        run.snapshots.append(
            _summarize(
                prepared,
                snapshot,
                rows,
                np.tile(result.state, (scenario.areas, 1)),
                len(result.trace) - 1,
                0,
                0,
                elapsed,
            )
        )
        covariance = result.covariance
        previous = result.state
    run.wall_time = time.perf_counter() - started
    return run


def run_diffusion_variant(prepared: PreparedRun, diffusion: DiffusionConfig) -> AlgorithmRun:
    """Diffusion with fixed base-variance weights; iterates carry across snapshots."""
    scenario = prepared.scenario
    grid = prepared.grid
    W = diffusion_weights(prepared)
    run = AlgorithmRun(label=f"diffusion_a{diffusion.alpha0:g}", algorithm="diffusion")
    covered = instrumented_coordinates(grid, prepared.masks)
    iterates = None
    started = time.perf_counter()
    for snapshot in prepared.snapshots:
        if iterates is None:
            start = pmu_init_centralized(prepared.pmu_vector(snapshot), covered, grid.flat_profile)
            iterates = np.tile(start, (scenario.areas, 1))
        areas = prepared.reference_areas(snapshot)
        tick = time.perf_counter()
        history = run_diffusion(grid, areas, W, iterates, diffusion)
        elapsed = time.perf_counter() - tick
        rows = []
        for ell, states in enumerate(history):
            rows.extend(
                compute_metrics(grid, snapshot.true_state, states, areas, snapshot.t, ell, None, elapsed)
            )
        iterates = history[-1]
        run.rows.extend(rows)
        run.exchange_axis[snapshot.t] = list(range(len(history)))
        run.snapshots.append(
            _summarize(prepared, snapshot, rows, iterates, diffusion.rounds, diffusion.rounds, 0, elapsed)
        )
    run.wall_time = time.perf_counter() - started
    return run


def run_algorithm(prepared: PreparedRun, algorithm: str) -> List[AlgorithmRun]:
    """One run per algorithm, or one per step size for ``diffusion``."""
    if algorithm == "darse":
        return [run_darse(prepared)]
    if algorithm == "central_gn":
        return [run_central(prepared, reweight=True)]
    if algorithm == "central_gn_noreweight":
        return [run_central(prepared, reweight=False)]
    if algorithm == "diffusion":
        v_max = prepared.scenario.gn.v_max
        return [
            run_diffusion_variant(prepared, diffusion)
            for diffusion in prepared.scenario.diffusion.configs(v_max)
        ]
    raise ScenarioError(f"unknown algorithm '{algorithm}', expected one of {', '.join(ALGORITHMS)}")


def reproduction_checks(runs: Sequence[AlgorithmRun], tolerance: float = MATCH_TOLERANCE) -> Dict[str, Any]:
    """Paired checks between algorithms run on the same inputs.

    Costs are compared with the base-variance reference cost so that
    algorithms with different re-weighting share one yardstick.
    """
    by_label = {run.label: run for run in runs}
    darse = by_label.get("darse")
    checks: Dict[str, Any] = {}
    if darse is None:
        return checks

    central = by_label.get("central_gn")
    if central is not None:
        gaps = []
        for ours, theirs in zip(darse.snapshots, central.snapshots):
            reference = theirs.final_val_ref[0]
            worst = max(abs(v - reference) for v in ours.final_val_ref)
            gaps.append(worst / reference if reference > 0 else worst)
        checks["darse_matches_central"] = {
            "tolerance": tolerance,
            "relative_gap": gaps,
            "passed": all(g <= tolerance for g in gaps),
        }

    plain = by_label.get("central_gn_noreweight")
    if plain is not None:
        wins = [
            ours.final_mse_v < theirs.final_mse_v and ours.final_mse_theta < theirs.final_mse_theta
            for ours, theirs in zip(darse.snapshots, plain.snapshots)
        ]
        share, out_of = SUPPRESSION_SHARE
        needed = -(-share * len(wins) // out_of)
        checks["bad_data_suppression"] = {
            "snapshots_better": int(sum(wins)),
            "snapshots": len(wins),
            "needed": needed,
            "passed": sum(wins) >= needed,
        }

    diffusion = [run for run in runs if run.algorithm == "diffusion"]
    if diffusion:
        ours = float(np.mean(darse.snapshots[-1].final_val_ref))
        theirs = {run.label: float(np.mean(run.snapshots[-1].final_val_ref)) for run in diffusion}
        checks["diffusion_slower"] = {
            "darse_final_val_ref": ours,
            "diffusion_final_val_ref": theirs,
            "passed": all(value > ours for value in theirs.values()),
        }
    for name, check in checks.items():
        level = "info" if check["passed"] else "warning"
        getattr(logger, level)(f"Check {name}: {'passed' if check['passed'] else 'FAILED'}")
    return checks


def figure_rows(runs: Sequence[AlgorithmRun], metric: str) -> List[tuple]:
    rows = []
    for run in runs:
        for row in run.network_rows():
            axis = run.exchange_axis.get(row.t, [])
            exchange = axis[row.k] if row.k < len(axis) else row.k
            rows.append((run.label, row.t, row.k, int(exchange), getattr(row, metric)))
    return rows


def write_results(
    out_dir, prepared: PreparedRun, result: ExperimentResult, figures: bool = False
) -> Path:
    out_dir = Path(out_dir)
    for run in result.runs:
        write_csv(out_dir / run.label / METRICS_FILE, CSV_HEADER, (r.csv_row() for r in run.rows))
    if figures:
        for metric, name in FIGURE_FILES.items():
            write_csv(out_dir / name, FIGURE_HEADER, figure_rows(result.runs, metric))
    write_json(out_dir / SUMMARY_FILE, result.summary(prepared.case))
    result.out_dir = out_dir
    logger.info(f"Results written to {out_dir}")
    return out_dir


def run_experiment(
    scenario: Scenario,
    algorithm: str = "darse",
    out_dir=None,
    prepared: Optional[PreparedRun] = None,
) -> ExperimentResult:
    """Run one algorithm; with ``out_dir`` also write metrics, summary and replay bundle."""
    prepared = prepared or prepare(scenario)
    return _execute(prepared, [algorithm], out_dir, figures=False)


def compare(
    scenario: Scenario,
    seed: int,
    algorithms: Sequence[str] = ALGORITHMS,
    out_dir=None,
    prepared: Optional[PreparedRun] = None,
) -> ExperimentResult:
    """Run several algorithms on one set of inputs and evaluate the paired checks."""
    scenario = scenario.with_seed(seed)
    prepared = prepared or prepare(scenario)
    return _execute(prepared, list(algorithms), out_dir, figures=True)


def _execute(
    prepared: PreparedRun, algorithms: List[str], out_dir, figures: bool
) -> ExperimentResult:
    def body() -> ExperimentResult:
        runs: List[AlgorithmRun] = []
        for algorithm in algorithms:
            runs.extend(run_algorithm(prepared, algorithm))
        result = ExperimentResult(prepared.scenario, runs)
        if len(algorithms) > 1:
            result.checks = reproduction_checks(runs)
        return result

    if out_dir is None:
        return body()
    with run_lock(out_dir):
        hashes = write_bundle(Path(out_dir) / REPLAY_DIR, prepared.bundle())
        result = body()
        result.replay_hashes = hashes
        write_results(out_dir, prepared, result, figures=figures)
    return result


def analyze_constants(
    scenario: Scenario,
    samples: int = 200,
    xi: float = 0.25,
    window: Optional[int] = None,
    amplitude: float = 0.1,
    prepared: Optional[PreparedRun] = None,
) -> Dict[str, Any]:
    """Convergence constants for the first snapshot under the prior weights.

    The state-space extrema are sampled around the true state (``amplitude``
    per coordinate); the window L defaults to the smallest one the first
    update's schedule satisfies.
    """
    prepared = prepared or prepare(scenario)
    grid = prepared.grid
    darse = prepared.darse_config
    snapshot = prepared.snapshots[0]
    gammas = prior_gammas(prepared.masks, scenario.sigma, scenario.gn.covariance_floor)
    areas = build_areas(prepared.masks, snapshot, gammas)

    omega = lipschitz_constant(grid, gammas)
    sampler = StateSampler(
        2 * grid.N, scenario.gn.v_max, center=snapshot.true_state, amplitude=amplitude, seed=scenario.seed
    )
    bounds = estimate_condition2(grid, areas, sampler, samples)

    events = prepared.schedule.slice(snapshot.t, 1)
    observed_window = smallest_window(prepared.schedule, 1, t=snapshot.t) if events else None
    L = window or observed_window or max(darse.exchanges_for(1), 1)
    condition1 = verify_condition1(prepared.schedule, 1, L, t=snapshot.t) if events else None

    constants = condition3_schedule(
        scenario.gossip.beta,
        scenario.areas,
        L,
        xi,
        bounds,
        omega,
        grid.N,
        exchange_rule=darse.exchange_rule.value,
        updates=darse.updates,
        strict=False,
    )
    prescribed = theorem1_bounds(constants)
    used = theorem1_bounds(constants, ell_star=darse.exchanges_for(1))
    report = {
        "schema_version": config.schema_version,
        "scenario": scenario.name,
        "case": prepared.case.name,
        "N": grid.N,
        "I": scenario.areas,
        "window": L,
        "observed_window": observed_window,
        "condition1": None
        if condition1 is None
        else {
            "connected": condition1.connected,
            "satisfied": condition1.satisfied,
            "violations": len(condition1.violations),
        },
        "observable": bounds.observable,
        "constants": constants.to_dict(),
        "bounds_at_ell_star": prescribed.to_dict(),
        "bounds_at_configured_exchanges": used.to_dict(),
        "payload_bits": payload_bits(grid.N),
        "measurement_counts": {
            category.name.lower(): int(sum(m.category_rows(category).size for m in prepared.masks))
            for category in MeasurementCategory
        },
    }
    logger.info(
        f"Constants for '{scenario.name}': omega={omega:.3e}, ell_star={constants.ell_star}, "
        f"L={L}, observable={bounds.observable}"
    )
    return report
