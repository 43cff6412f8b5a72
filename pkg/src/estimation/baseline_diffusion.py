# src/estimation/baseline_diffusion.py - First-order diffusion baseline
"""Combine-then-adapt diffusion: mix iterates with a doubly stochastic W,
then take a local whitened gradient step with step size alpha0 / ell.

This is the standard first-order scheme, used for a qualitative comparison
of convergence speed; it does not reproduce any particular published
diffusion variant.
"""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from config.config import config
from src.core.exceptions import DimensionMismatchError
from src.core.grid_model import GridModel
from src.core.measurement import AreaMeasurement
from src.core.power_flow import jacobian
from src.estimation.central_estimator import project_state
from src.estimation.information import whitened_residual
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)


@dataclass
class DiffusionConfig:
    alpha0: float = 0.3
    rounds: int = config.diffusion_rounds
    v_max: float = config.v_max

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")

    def step_size(self, ell: int) -> float:
        return self.alpha0 / ell


def local_gradient(grid: GridModel, area: AreaMeasurement, v: np.ndarray) -> np.ndarray:
    """F_tilde_i(v)^T (c_tilde_i - f_tilde_i(v))."""
    if area.mask.size == 0:
        return np.zeros(2 * grid.N)
    F = jacobian(grid, v, area.rows) * area.scale[:, None]
    return F.T @ whitened_residual(grid, area, v)


def diffusion_round(
    iterates: np.ndarray,
    W: np.ndarray,
    grid: GridModel,
    areas: Sequence[AreaMeasurement],
    alpha: float,
    v_max: float = config.v_max,
) -> np.ndarray:
    """v_i <- P_V[sum_j W_ij v_j + alpha * grad_i(v_i)]."""
    iterates = np.asarray(iterates, dtype=float)
    if iterates.shape != (len(areas), 2 * grid.N) or W.shape != (len(areas), len(areas)):
        raise DimensionMismatchError(
            f"iterates {iterates.shape} and W {W.shape} do not match {len(areas)} agents"
        )
    combined = W @ iterates
    if alpha == 0:
        return project_state(combined, v_max)
    gradients = np.stack(
        [local_gradient(grid, area, v) for area, v in zip(areas, iterates)]
    )
    return project_state(combined + alpha * gradients, v_max)


def run_diffusion(
    grid: GridModel,
    areas: Sequence[AreaMeasurement],
    W: np.ndarray,
    initial: np.ndarray,
    diffusion: DiffusionConfig,
) -> List[np.ndarray]:
    """Iterate history, index 0 being the initial iterates."""
    history = [project_state(initial, diffusion.v_max)]
    for ell in range(1, diffusion.rounds + 1):
        history.append(
            diffusion_round(
                history[-1], W, grid, areas, diffusion.step_size(ell), diffusion.v_max
            )
        )
    logger.debug(f"Diffusion alpha0={diffusion.alpha0}: {diffusion.rounds} rounds")
    return history
