# src/estimation/central_estimator.py - Centralized weighted Gauss-Newton and ARSE
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from config.config import config
from src.core.exceptions import DimensionMismatchError
from src.core.grid_model import GridModel
from src.core.measurement import (
    AreaMeasurement,
    SelectionMask,
    Snapshot,
    build_areas,
    prior_gammas,
)
from src.core.power_flow import check_state, evaluate_f
from src.estimation.information import (
    InfoVector,
    area_information,
    network_mean,
    solve_normal_equations,
    stack_payloads,
    weighted_cost,
)
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)


@dataclass
class GNOptions:
    max_iters: int = config.updates_per_snapshot
    step_tol: float = config.step_tol
    v_max: float = config.v_max
    ridge_scale: float = config.ridge_scale
    covariance_floor: float = config.covariance_floor
    second_pass: bool = False
    warm_start: bool = True

    def __post_init__(self):
        for name in ("max_iters", "step_tol", "v_max", "ridge_scale", "covariance_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"GNOptions.{name} must be positive, got {getattr(self, name)}")


@dataclass
class CovarianceEstimate:
    """Per-area diagonal variance estimates, floored."""

    variances: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def prior(
        cls, masks: Sequence[SelectionMask], sigma: float, floor: float
    ) -> "CovarianceEstimate":
        return cls(prior_gammas(masks, sigma, floor))

    def to_dict(self) -> Dict[str, Any]:
        return {"variances": [v.tolist() for v in self.variances]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CovarianceEstimate":
        return cls([np.asarray(v, dtype=float) for v in data["variances"]])


class GNStep(NamedTuple):
    v_next: np.ndarray
    q: np.ndarray
    Q: np.ndarray
    ridge: float
    step_norm: float


@dataclass
class IterateRecord:
    k: int
    state: np.ndarray
    cost: float
    step_norm: float = 0.0
    ridge: float = 0.0


@dataclass
class ArseResult:
    state: np.ndarray
    covariance: CovarianceEstimate
    trace: List[IterateRecord]


def project_state(v, v_max: float) -> np.ndarray:
    """Componentwise clamp onto the box [-v_max, v_max]^{2N}."""
    return np.clip(np.asarray(v, dtype=float), -v_max, v_max)


def gn_step(
    grid: GridModel, areas: Sequence[AreaMeasurement], v, opts: GNOptions
) -> GNStep:
    """One projected Gauss-Newton step on the whitened problem.

    q and Q are the network means of the per-area terms; the 1/I factor
    cancels in the step Q^{-1} q.
    """
    v = check_state(grid, v)
    dim = v.size
    infos = [area_information(grid, area, v) for area in areas]
    mean = InfoVector.unpack(network_mean(stack_payloads(infos)), dim)
    d, ridge = solve_normal_equations(mean.H, mean.h, opts.ridge_scale)
    v_next = project_state(v + d, opts.v_max)
    return GNStep(v_next, mean.h, mean.H, ridge, float(np.linalg.norm(v_next - v)))


def solve_weighted_nlls(
    grid: GridModel,
    areas: Sequence[AreaMeasurement],
    v0,
    opts: GNOptions,
) -> Tuple[np.ndarray, List[IterateRecord]]:
    """Iterate gn_step until the step norm drops below step_tol or max_iters.

    The trace holds the iterate and cost at k = 0 (start) through the last
    update.
    """
    v = project_state(check_state(grid, v0), opts.v_max)
    trace = [IterateRecord(0, v.copy(), weighted_cost(grid, areas, v))]
    for k in range(1, opts.max_iters + 1):
        step = gn_step(grid, areas, v, opts)
        v = step.v_next
        trace.append(
            IterateRecord(k, v.copy(), weighted_cost(grid, areas, v), step.step_norm, step.ridge)
        )
        logger.debug(f"GN k={k} cost={trace[-1].cost:.6e} step={step.step_norm:.3e}")
        if step.step_norm <= opts.step_tol:
            break
    return v, trace


def covariance_update(
    measurements: Sequence[np.ndarray],
    v_hat,
    grid: GridModel,
    masks: Sequence[SelectionMask],
    floor: float = config.covariance_floor,
) -> CovarianceEstimate:
    """eps_hat = max(|c - f(v_hat)|^2, floor) per kept entry."""
    if len(measurements) != len(masks):
        raise DimensionMismatchError(
            f"{len(measurements)} measurement vectors for {len(masks)} masks"
        )
    v_hat = check_state(grid, v_hat)
    f = evaluate_f(grid, v_hat)
    variances = []
    for c, mask in zip(measurements, masks):
        residual = np.asarray(c, dtype=float) - f[mask.rows]
        variances.append(np.maximum(residual**2, floor))
    return CovarianceEstimate(variances)


def arse_step(
    prev: CovarianceEstimate,
    snapshot: Snapshot,
    grid: GridModel,
    masks: Sequence[SelectionMask],
    opts: GNOptions,
    v_init,
    reweight: bool = True,
) -> ArseResult:
    """Gamma_i := previous estimate, solve, then re-estimate the covariance.

    With ``reweight=False`` the weights stay at ``prev`` (plain weighted GN).
    """
    areas = build_areas(masks, snapshot, prev.variances)
    v_hat, trace = solve_weighted_nlls(grid, areas, v_init, opts)
    if not reweight:
        return ArseResult(v_hat, prev, trace)
    measurements = [area.c for area in areas]
    covariance = covariance_update(measurements, v_hat, grid, masks, opts.covariance_floor)
    if opts.second_pass:
        areas = build_areas(masks, snapshot, covariance.variances)
        v_hat, second = solve_weighted_nlls(grid, areas, v_hat, opts)
        offset = trace[-1].k
        trace.extend(
            IterateRecord(r.k + offset, r.state, r.cost, r.step_norm, r.ridge)
            for r in second[1:]
        )
        covariance = covariance_update(measurements, v_hat, grid, masks, opts.covariance_floor)
    logger.info(
        f"ARSE t={snapshot.t}: {len(trace) - 1} GN iterations, final cost {trace[-1].cost:.6e}"
    )
    return ArseResult(v_hat, covariance, trace)


def initial_prior(
    masks: Sequence[SelectionMask], sigma: float, opts: Optional[GNOptions] = None
) -> CovarianceEstimate:
    floor = opts.covariance_floor if opts else config.covariance_floor
    return CovarianceEstimate.prior(masks, sigma, floor)
