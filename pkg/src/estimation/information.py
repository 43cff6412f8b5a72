# src/estimation/information.py - Whitened gradient/Hessian terms shared by all solvers
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from src.core.exceptions import DimensionMismatchError, SingularHessianError
from src.core.grid_model import GridModel
from src.core.measurement import AreaMeasurement
from src.core.power_flow import evaluate_f, jacobian
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)


@dataclass
class InfoVector:
    """Gossip payload: local whitened gradient h and GN Hessian H.

    Packed wire format is ``[h; vec(H)]`` with H stacked column-major.
    """

    h: np.ndarray
    H: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.h.size)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.h, self.H.ravel(order="F")])

    @classmethod
    def unpack(cls, packed: np.ndarray, dim: int) -> "InfoVector":
        packed = np.asarray(packed, dtype=float)
        if packed.shape != (dim + dim * dim,):
            raise DimensionMismatchError(
                f"packed payload must have length {dim + dim * dim}, got {packed.shape}"
            )
        return cls(packed[:dim].copy(), packed[dim:].reshape((dim, dim), order="F"))

    @classmethod
    def zeros(cls, dim: int) -> "InfoVector":
        return cls(np.zeros(dim), np.zeros((dim, dim)))


def whitened_residual(grid: GridModel, area: AreaMeasurement, v: np.ndarray) -> np.ndarray:
    """c_tilde_i - f_tilde_i(v)."""
    if area.mask.size == 0:
        return np.zeros(0)
    return (area.c - evaluate_f(grid, v, area.rows)) * area.scale


def area_information(grid: GridModel, area: AreaMeasurement, v: np.ndarray) -> InfoVector:
    """h = F_tilde^T (c_tilde - f_tilde(v)), H = F_tilde^T F_tilde."""
    dim = 2 * grid.N
    if area.mask.size == 0:
        return InfoVector.zeros(dim)
    F = jacobian(grid, v, area.rows) * area.scale[:, None]
    residual = whitened_residual(grid, area, v)
    return InfoVector(F.T @ residual, F.T @ F)


def area_cost(grid: GridModel, area: AreaMeasurement, v: np.ndarray) -> float:
    residual = whitened_residual(grid, area, v)
    return float(residual @ residual)


def weighted_cost(grid: GridModel, areas: Sequence[AreaMeasurement], v: np.ndarray) -> float:
    """sum_i ||c_tilde_i - f_tilde_i(v)||^2."""
    return float(sum(area_cost(grid, area, v) for area in areas))


def network_mean(payloads: np.ndarray) -> np.ndarray:
    """Exact network average of stacked packed payloads (one row per agent)."""
    return np.mean(np.asarray(payloads, dtype=float), axis=0)


def stack_payloads(infos: Sequence[InfoVector]) -> np.ndarray:
    return np.stack([info.pack() for info in infos])


def _cholesky_ok(H: np.ndarray) -> Optional[Tuple]:
    try:
        factor = la.cho_factor(H, lower=True, check_finite=True)
    except (la.LinAlgError, ValueError):
        return None
    pivots = np.abs(np.diag(factor[0]))
    if pivots.max() == 0:
        return None
    ratio = (pivots.min() / pivots.max()) ** 2
    if ratio < H.shape[0] * np.finfo(float).eps:
        return None
    return factor


def solve_normal_equations(
    H: np.ndarray,
    h: np.ndarray,
    ridge_scale: Optional[float] = None,
) -> Tuple[np.ndarray, float]:
    """Solve H d = h by Cholesky.

    When the factorization fails or is numerically rank deficient and
    ``ridge_scale`` is given, ``ridge_scale * trace(H) / dim`` is added to the
    diagonal once. Returns ``(d, ridge)``.

    Raises:
        SingularHessianError: if no factorization succeeds.
    """
    dim = h.size
    factor = _cholesky_ok(H)
    ridge = 0.0
    if factor is None and ridge_scale is not None:
        trace = float(np.trace(H))
        if trace > 0 and np.isfinite(trace):
            ridge = ridge_scale * trace / dim
            factor = _cholesky_ok(H + ridge * np.eye(dim))
            if factor is not None:
                logger.warning(f"Hessian near singular, added ridge {ridge:.3e}")
    if factor is None:
        rank = int(np.linalg.matrix_rank(H)) if np.all(np.isfinite(H)) else 0
        raise SingularHessianError(rank, dim)
    return la.cho_solve(factor, h), ridge
