# src/estimation/ggn_darse.py - Gossip-based Gauss-Newton and the DARSE scheme
"""Decentralized adaptive re-weighted state estimation.

Each agent builds its local information vector at its own iterate, the
packed payloads are mixed by a gossip mixer, and each agent then takes a
Gauss-Newton step with its mixed payload. Between snapshots every agent
re-estimates the variances of its own measurements at its own final iterate.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Protocol, Sequence

import numpy as np

from src.core.exceptions import SingularHessianError, SingularLocalHessianError
from src.core.grid_model import GridModel
from src.core.measurement import AreaMeasurement, SelectionMask, Snapshot
from src.estimation.central_estimator import (
    CovarianceEstimate,
    GNOptions,
    covariance_update,
    project_state,
)
from src.estimation.information import (
    InfoVector,
    area_information,
    network_mean,
    solve_normal_equations,
    stack_payloads,
)
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)


class Mixer(Protocol):
    def mix(self, payloads: np.ndarray, t: int, k: int, rounds: int) -> np.ndarray: ...


class ExchangeRule(Enum):
    CONSTANT = "constant"
    INCREMENTING = "incrementing"  # ell_k = ell_{k-1} + 1


class InitMode(Enum):
    PMU_DECENTRALIZED = "pmu_decentralized"
    PMU_CENTRALIZED = "pmu_centralized"
    PREVIOUS_ESTIMATE = "previous_estimate"
    FLAT = "flat"


class SingularPolicy(Enum):
    FREEZE = "freeze"
    RIDGE = "ridge"


@dataclass
class DarseConfig:
    updates: int = 20
    exchanges: int = 10
    exchange_rule: ExchangeRule = ExchangeRule.CONSTANT
    step_tol: float = 1e-8
    init_mode: InitMode = InitMode.PMU_DECENTRALIZED
    init_exchanges: Optional[int] = None
    singular_policy: SingularPolicy = SingularPolicy.FREEZE
    track_discrepancy: bool = False
    gn: GNOptions = field(default_factory=GNOptions)

    def __post_init__(self):
        self.exchange_rule = ExchangeRule(self.exchange_rule)
        self.init_mode = InitMode(self.init_mode)
        self.singular_policy = SingularPolicy(self.singular_policy)
        if self.updates < 1:
            raise ValueError(f"updates must be >= 1, got {self.updates}")
        if self.exchanges < 0:
            raise ValueError(f"exchanges must be >= 0, got {self.exchanges}")
        if self.step_tol <= 0:
            raise ValueError("step_tol must be positive")

    def exchanges_for(self, k: int) -> int:
        """ell_k for update k = 1..updates."""
        if self.exchange_rule is ExchangeRule.INCREMENTING:
            return self.exchanges + (k - 1)
        return self.exchanges

    @property
    def pmu_exchanges(self) -> int:
        return self.exchanges if self.init_exchanges is None else self.init_exchanges

    @property
    def ridge_scale(self) -> Optional[float]:
        if self.singular_policy is SingularPolicy.RIDGE:
            return self.gn.ridge_scale
        return None


@dataclass
class AgentState:
    agent: int
    v: np.ndarray
    gamma: np.ndarray
    mask: SelectionMask
    c: np.ndarray
    frozen: bool = False
    stopped: bool = False

    @property
    def area(self) -> AreaMeasurement:
        return AreaMeasurement(self.mask, self.c, self.gamma)


@dataclass
class UpdateReport:
    t: int
    k: int
    exchanges: int
    frozen: List[int] = field(default_factory=list)
    stopped: List[int] = field(default_factory=list)
    discrepancies: Dict[int, float] = field(default_factory=dict)


@dataclass
class DarseSnapshotResult:
    t: int
    states: np.ndarray  # (updates + 1, I, 2N); index 0 is the initial iterate
    covariance: CovarianceEstimate
    reports: List[UpdateReport]
    frozen: np.ndarray  # (updates + 1, I) booleans

    @property
    def final_states(self) -> np.ndarray:
        return self.states[-1]

    @property
    def exchanges_per_update(self) -> List[int]:
        return [0] + [report.exchanges for report in self.reports]


def local_info_init(grid: GridModel, agent: AgentState) -> InfoVector:
    """h = F_tilde_i^T (c_tilde_i - f_tilde_i(v_i)), H = F_tilde_i^T F_tilde_i."""
    return area_information(grid, agent.area, agent.v)


def local_direction(
    agent: AgentState, info: InfoVector, ridge_scale: Optional[float] = None
) -> np.ndarray:
    """d_i = H^{-1} h from the mixed payload. Any common scale of (h, H) cancels."""
    try:
        d, _ = solve_normal_equations(info.H, info.h, ridge_scale)
    except SingularHessianError as error:
        raise SingularLocalHessianError(agent.agent, error.rank, error.dim) from error
    return d


def ggn_descent(
    agent: AgentState, info: InfoVector, v_max: float, ridge_scale: Optional[float] = None
) -> np.ndarray:
    """P_V[v_i + H^{-1} h]."""
    return project_state(agent.v + local_direction(agent, info, ridge_scale), v_max)


def _shadow_descent(
    grid: GridModel,
    agents: Sequence[AgentState],
    v: np.ndarray,
    ridge_scale: Optional[float] = None,
) -> Optional[np.ndarray]:
    infos = [area_information(grid, other.area, v) for other in agents]
    mean = InfoVector.unpack(network_mean(stack_payloads(infos)), v.size)
    try:
        d, _ = solve_normal_equations(mean.H, mean.h, ridge_scale)
    except SingularHessianError:
        return None
    return d


def run_ggn_update(
    agents: Sequence[AgentState],
    grid: GridModel,
    mixer: Mixer,
    k: int,
    ell_k: int,
    config: DarseConfig,
    t: int = 0,
) -> UpdateReport:
    """Advance every agent by one GGN update (in place)."""
    dim = 2 * grid.N
    report = UpdateReport(t=t, k=k, exchanges=ell_k)
    infos = [local_info_init(grid, agent) for agent in agents]
    mixed = mixer.mix(stack_payloads(infos), t, k, ell_k)
    for agent, payload in zip(agents, mixed):
        agent.frozen = False
        if agent.stopped:
            report.stopped.append(agent.agent)
            continue
        info = InfoVector.unpack(payload, dim)
        try:
            d = local_direction(agent, info, config.ridge_scale)
        except SingularLocalHessianError as error:
            agent.frozen = True
            report.frozen.append(agent.agent)
            logger.debug(f"t={t} k={k}: {error}; iterate frozen")
            continue
        if config.track_discrepancy:
            shadow = _shadow_descent(grid, agents, agent.v, config.ridge_scale)
            if shadow is not None:
                report.discrepancies[agent.agent] = float(np.linalg.norm(d - shadow))
        v_next = project_state(agent.v + d, config.gn.v_max)
        step = float(np.linalg.norm(v_next - agent.v))
        agent.v = v_next
        if step <= config.step_tol:
            agent.stopped = True
    if report.frozen:
        logger.warning(f"t={t} k={k}: agents {report.frozen} froze (singular mixed Hessian)")
    return report


def pmu_init_centralized(z_v, instrumented, s_v) -> np.ndarray:
    """v0 = I_V z_V + (I - I_V) s_V with I_V the PMU-instrumented coordinates."""
    z_v = np.asarray(z_v, dtype=float)
    return np.where(np.asarray(instrumented, dtype=bool), z_v, np.asarray(s_v, dtype=float))


def pmu_payload(agent: AgentState, dim: int) -> np.ndarray:
    """Zero-padded T_{i,V}^T c_{i,V}."""
    payload = np.zeros(dim)
    count = agent.mask.voltage.size
    payload[agent.mask.voltage] = agent.c[:count]
    return payload


def pmu_init_decentralized(
    agents: Sequence[AgentState],
    mixer: Mixer,
    rounds: int,
    s_v: Sequence[np.ndarray],
    t: int = 0,
) -> List[np.ndarray]:
    """v_i0 = I * V_i(ell) + (1 - |sgn V_i(ell)|) s_V.

    A coordinate whose gossiped value is exactly zero counts as uninstrumented
    and falls back to s_V, including a PMU that truly reads zero. The
    rescaling by I reproduces the measured value bit for bit only when the
    division and multiplication by I are exact (I a power of two).
    """
    count = len(agents)
    dim = np.asarray(s_v[0]).size
    payloads = np.stack([pmu_payload(agent, dim) for agent in agents])
    mixed = mixer.mix(payloads, t, 0, rounds)
    states = []
    for row, s in zip(mixed, s_v):
        indicator = np.abs(np.sign(row))
        states.append(count * row + (1.0 - indicator) * np.asarray(s, dtype=float))
    return states


def _initial_states(
    agents: Sequence[AgentState],
    grid: GridModel,
    mixer: Mixer,
    config: DarseConfig,
    previous: Sequence[np.ndarray],
    t: int,
) -> List[np.ndarray]:
    mode = config.init_mode
    if mode is InitMode.FLAT:
        return [grid.flat_profile for _ in agents]
    if mode is InitMode.PREVIOUS_ESTIMATE:
        return [np.array(p, dtype=float) for p in previous]
    if mode is InitMode.PMU_CENTRALIZED:
        dim = 2 * grid.N
        z_v = np.sum([pmu_payload(agent, dim) for agent in agents], axis=0)
        covered = np.zeros(dim, dtype=bool)
        for agent in agents:
            covered[agent.mask.voltage] = True
        return [pmu_init_centralized(z_v, covered, s) for s in previous]
    return pmu_init_decentralized(agents, mixer, config.pmu_exchanges, previous, t=t)


def darse_snapshot(
    agents: Sequence[AgentState],
    grid: GridModel,
    snapshot: Snapshot,
    config: DarseConfig,
    mixer: Mixer,
) -> DarseSnapshotResult:
    """One DARSE snapshot: initialize, run the GGN updates, re-weight.

    Agents carry ``gamma`` (previous variance estimates or the prior) and
    ``v`` (previous estimate or the flat profile) on entry.
    """
    t = snapshot.t
    previous = [agent.v.copy() for agent in agents]
    for agent in agents:
        agent.c = snapshot.c(agent.agent)
        agent.frozen = False
        agent.stopped = False
    starts = _initial_states(agents, grid, mixer, config, previous, t)
    for agent, start in zip(agents, starts):
        agent.v = project_state(start, config.gn.v_max)

    history = [np.stack([agent.v for agent in agents])]
    frozen = [np.zeros(len(agents), dtype=bool)]
    reports = []
    for k in range(1, config.updates + 1):
        report = run_ggn_update(agents, grid, mixer, k, config.exchanges_for(k), config, t=t)
        reports.append(report)
        history.append(np.stack([agent.v for agent in agents]))
        frozen.append(np.array([agent.frozen for agent in agents]))

    variances = []
    for agent in agents:
        update = covariance_update(
            [agent.c], agent.v, grid, [agent.mask], config.gn.covariance_floor
        )
        variances.append(update.variances[0])
        agent.gamma = update.variances[0]
    logger.info(
        f"DARSE t={t}: {config.updates} updates, "
        f"{sum(r.exchanges for r in reports)} exchanges, "
        f"{sum(len(r.frozen) for r in reports)} frozen agent-updates"
    )
    return DarseSnapshotResult(
        t=t,
        states=np.stack(history),
        covariance=CovarianceEstimate(variances),
        reports=reports,
        frozen=np.stack(frozen),
    )


def make_agents(
    grid: GridModel,
    masks: Sequence[SelectionMask],
    prior: CovarianceEstimate,
    initial_state: Optional[np.ndarray] = None,
) -> List[AgentState]:
    start = grid.flat_profile if initial_state is None else np.asarray(initial_state, float)
    return [
        AgentState(
            agent=i,
            v=start.copy(),
            gamma=prior.variances[i].copy(),
            mask=mask,
            c=np.zeros(mask.size),
        )
        for i, mask in enumerate(masks)
    ]


def darse_track(
    agents: Sequence[AgentState],
    grid: GridModel,
    snapshots: Sequence[Snapshot],
    config: DarseConfig,
    mixer: Mixer,
) -> List[DarseSnapshotResult]:
    """Fold darse_snapshot over the stream, carrying variances and final states."""
    if not snapshots:
        raise ValueError("darse_track needs at least one snapshot")
    return [darse_snapshot(agents, grid, snapshot, config, mixer) for snapshot in snapshots]
