# src/core/power_flow.py - Measurement function, Jacobian and Lipschitz constant
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.core.exceptions import DimensionMismatchError, NonPositiveWeightError
from src.core.grid_model import EnsembleLayout, FormRows, GridModel
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)

# Above this state dimension the spectral norm of M uses a sparse eigensolver.
DENSE_EIG_LIMIT = 2000

__all__ = [
    "EnsembleLayout",
    "ensemble_layout",
    "evaluate_f",
    "jacobian",
    "quadratic_remainder",
    "lipschitz_matrix",
    "lipschitz_constant",
    "check_state",
]


def ensemble_layout(grid: GridModel) -> EnsembleLayout:
    return grid.layout


def check_state(grid: GridModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (2 * grid.N,):
        raise DimensionMismatchError(
            f"state vector must have shape ({2 * grid.N},), got {v.shape}"
        )
    return v


def _rows(grid: GridModel, rows: Optional[Sequence[int]]) -> FormRows:
    return grid.forms.subset(rows)


def _evaluate(forms: FormRows, v: np.ndarray) -> np.ndarray:
    return (
        forms.lin @ v
        + v[forms.pivot_a] * (forms.upper @ v)
        + v[forms.pivot_b] * (forms.lower @ v)
    )


def evaluate_f(grid: GridModel, v, rows: Optional[Sequence[int]] = None) -> np.ndarray:
    """Measurement ensemble f(v), or the entries listed in ``rows``."""
    v = check_state(grid, v)
    return _evaluate(_rows(grid, rows), v)


def jacobian(grid: GridModel, v, rows: Optional[Sequence[int]] = None) -> np.ndarray:
    """Dense Jacobian F(v) with one row per requested ensemble entry.

    Quadratic row r contributes ``v^T (A_r + A_r^T)``.
    """
    v = check_state(grid, v)
    forms = _rows(grid, rows)
    count = forms.size
    dim = v.size
    if count == 0:
        return np.zeros((0, dim))
    J = (
        forms.lin
        + sp.diags(v[forms.pivot_a]) @ forms.upper
        + sp.diags(v[forms.pivot_b]) @ forms.lower
    )
    local = np.arange(count)
    scatter = sp.csr_matrix(
        (
            np.concatenate([forms.upper @ v, forms.lower @ v]),
            (np.concatenate([local, local]), np.concatenate([forms.pivot_a, forms.pivot_b])),
        ),
        shape=(count, dim),
    )
    return (J + scatter).toarray()


def quadratic_remainder(
    grid: GridModel, delta, rows: Optional[Sequence[int]] = None
) -> np.ndarray:
    """Pure quadratic term q with f(v + delta) = f(v) + F(v) delta + q(delta)."""
    delta = check_state(grid, delta)
    forms = _rows(grid, rows)
    return delta[forms.pivot_a] * (forms.upper @ delta) + delta[forms.pivot_b] * (
        forms.lower @ delta
    )


def lipschitz_matrix(grid: GridModel) -> np.ndarray:
    """M = sum over quadratic entries of S_r^T S_r with S_r = A_r + A_r^T."""
    H = grid.forms.lipschitz_stack()
    return (H.T @ H).toarray()


def _spectral_norm(M: np.ndarray) -> float:
    if not M.any():
        return 0.0
    if M.shape[0] <= DENSE_EIG_LIMIT:
        return float(max(la.eigvalsh(M).max(), 0.0))
    top = spla.eigsh(sp.csr_matrix(M), k=1, which="LA", return_eigenvectors=False)
    return float(max(top[0], 0.0))


def lipschitz_constant(grid: GridModel, gammas: Sequence[np.ndarray]) -> float:
    """omega = max_i sqrt(||M|| / lambda_min(Gamma_i)) over non-empty areas."""
    minima = []
    for index, gamma in enumerate(gammas):
        gamma = np.asarray(gamma, dtype=float)
        if gamma.size == 0:
            continue
        if not np.all(np.isfinite(gamma)) or np.any(gamma <= 0):
            raise NonPositiveWeightError(
                f"area {index}: weight diagonal must be positive and finite"
            )
        minima.append(float(gamma.min()))
    if not minima:
        return 0.0
    norm = _spectral_norm(lipschitz_matrix(grid))
    omega = max(np.sqrt(norm / m) for m in minima)
    logger.debug(f"||M|| = {norm:.6e}, omega = {omega:.6e}")
    return float(omega)
