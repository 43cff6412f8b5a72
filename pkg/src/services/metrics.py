# src/services/metrics.py - Cost, MSE and consensus metrics per update
"""Metric rows for one (snapshot, update) pair.

Per-agent row i:
    val       global cost sum_j ||c_tilde_j - f_tilde_j(v_i)||^2 at agent i's iterate
    mse_v     sum_n (|V_bar_n| - |V_hat_{i,n}|)^2
    mse_theta sum_n wrap(angle V_bar_n - angle V_hat_{i,n})^2
    spread    ||v_i - mean_j v_j||
Network row (agent = -1):
    val       sum_i ||c_tilde_i - f_tilde_i(v_i)||^2 (each area at its own agent)
    mse_v     sum_i mse_v_i, likewise mse_theta
    spread    max_{i,j} ||v_i - v_j||

Angles come from atan2(Im, Re), which gives 0 for a zero phasor; differences
are wrapped to (-pi, pi].
"""
from dataclasses import astuple, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from src.core.exceptions import DimensionMismatchError
from src.core.grid_model import GridModel
from src.core.measurement import AreaMeasurement
from src.estimation.information import area_cost

NETWORK_AGENT = -1
CSV_HEADER = ("t", "k", "agent", "val", "mse_v", "mse_theta", "spread", "frozen")


@dataclass
class MetricsRow:
    t: int
    k: int
    agent: int
    val: float
    mse_v: float
    mse_theta: float
    spread: float
    frozen: int = 0
    wall_time: float = 0.0

    def csv_row(self) -> Tuple:
        return astuple(self)[: len(CSV_HEADER)]

    @property
    def is_network(self) -> bool:
        return self.agent == NETWORK_AGENT


def polar(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    N = v.shape[-1] // 2
    re, im = v[..., :N], v[..., N:]
    return np.hypot(re, im), np.arctan2(im, re)


def wrap_angle(d):
    """Map angle differences to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(d, dtype=float), 2.0 * np.pi)


def state_errors(truth: np.ndarray, estimates: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-estimate (MSE_V, MSE_Theta) against one true state."""
    mag_true, ang_true = polar(truth)
    mag_hat, ang_hat = polar(estimates)
    mse_v = np.sum((mag_true - mag_hat) ** 2, axis=-1)
    mse_theta = np.sum(wrap_angle(ang_true - ang_hat) ** 2, axis=-1)
    return mse_v, mse_theta


def compute_metrics(
    grid: GridModel,
    truth,
    estimates,
    areas: Sequence[AreaMeasurement],
    t: int,
    k: int,
    frozen: Optional[Sequence[bool]] = None,
    wall_time: float = 0.0,
) -> List[MetricsRow]:
    """Per-agent rows followed by the network row."""
    truth = np.asarray(truth, dtype=float)
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    dim = 2 * grid.N
    if truth.shape != (dim,) or estimates.shape[1] != dim:
        raise DimensionMismatchError(
            f"truth {truth.shape} / estimates {estimates.shape} do not match 2N = {dim}"
        )
    if estimates.shape[0] != len(areas):
        raise DimensionMismatchError(
            f"{estimates.shape[0]} estimates for {len(areas)} areas"
        )
    frozen = np.zeros(len(areas), dtype=bool) if frozen is None else np.asarray(frozen, bool)

    mse_v, mse_theta = state_errors(truth, estimates)
    centre = estimates.mean(axis=0)
    rows = []
    own_costs = []
    for i, v in enumerate(estimates):
        costs = [area_cost(grid, area, v) for area in areas]
        own_costs.append(costs[i])
        rows.append(
            MetricsRow(
                t=t,
                k=k,
                agent=i,
                val=float(sum(costs)),
                mse_v=float(mse_v[i]),
                mse_theta=float(mse_theta[i]),
                spread=float(np.linalg.norm(v - centre)),
                frozen=int(frozen[i]),
                wall_time=wall_time,
            )
        )
    spread = float(pdist(estimates).max()) if len(estimates) > 1 else 0.0
    rows.append(
        MetricsRow(
            t=t,
            k=k,
            agent=NETWORK_AGENT,
            val=float(sum(own_costs)),
            mse_v=float(mse_v.sum()),
            mse_theta=float(mse_theta.sum()),
            spread=spread,
            frozen=int(frozen.sum()),
            wall_time=wall_time,
        )
    )
    return rows


def network_rows(rows: Sequence[MetricsRow]) -> List[MetricsRow]:
    return [row for row in rows if row.is_network]
