# src/services/trajectory.py - True-state trajectories for multi-snapshot runs
"""``static`` repeats the base state. ``perturb`` is a random walk around the
base state: each snapshot moves every coordinate of bus n by
``amplitude * |V_n| * U[-1, 1]``, so no coordinate drifts by more than
``amplitude * max_n |V_n|`` between consecutive snapshots.
"""
from enum import Enum
from typing import List

import numpy as np

from config.config import config
from src.utils.logging_utils import get_logger
from src.utils.rng import RandomStreams, StreamPurpose

logger = get_logger(__name__)


class TrajectoryMode(Enum):
    STATIC = "static"
    PERTURB = "perturb"


def bus_magnitudes(v: np.ndarray) -> np.ndarray:
    N = v.size // 2
    return np.hypot(v[:N], v[N:])


def make_trajectory(
    base_state,
    mode="static",
    T: int = 1,
    seed: int = 0,
    amplitude: float = config.trajectory_amplitude,
) -> List[np.ndarray]:
    """True states v_bar[0..T-1]; ``base_state`` is a state vector or a CaseFile."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    if hasattr(base_state, "operating_state"):
        base_state = base_state.operating_state()
    base = np.asarray(base_state, dtype=float)
    if base.ndim != 1 or base.size % 2:
        raise ValueError(f"base state must be a vector of even length, got shape {base.shape}")

    mode = TrajectoryMode(mode)
    if mode is TrajectoryMode.STATIC or amplitude == 0:
        return [base.copy() for _ in range(T)]

    rng = RandomStreams(seed).generator(StreamPurpose.TRAJECTORY)
    scale = np.tile(bus_magnitudes(base), 2)
    states = [base.copy()]
    for _ in range(1, T):
        step = amplitude * scale * rng.uniform(-1.0, 1.0, base.size)
        states.append(states[-1] + step)
    logger.debug(f"Perturbed trajectory: T={T}, amplitude={amplitude}")
    return states
