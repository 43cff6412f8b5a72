# src/estimation/convergence.py - Convergence constants and bound checks
"""Constants of the convergence analysis.

The state-space extrema behind the cost and singular-value bounds are
estimated by sampling; every value derived from them is therefore
empirical. Large constants are carried in log space so that the exchange
count formula stays finite where the raw constants overflow.
"""
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

from config.config import config
from src.core.exceptions import ExchangeBudgetExceeded
from src.core.grid_model import GridModel
from src.core.measurement import AreaMeasurement
from src.core.power_flow import jacobian
from src.estimation.information import whitened_residual
from src.utils.logging_utils import get_logger
from src.utils.rng import RandomStreams, StreamPurpose

logger = get_logger(__name__)

UNOBSERVABLE_TOL = 1e-10


class StateSampler:
    """Draws states in the box [-v_max, v_max]^{2N}.

    With a ``center`` the draw is ``center + amplitude * U[-1, 1]`` clipped to
    the box, otherwise it is uniform over the box. Sample j always comes from
    its own stream, so the first n samples do not depend on the total count.
    """

    def __init__(
        self,
        dim: int,
        v_max: float = config.v_max,
        center: Optional[np.ndarray] = None,
        amplitude: float = 0.1,
        seed: int = 0,
    ):
        self.dim = dim
        self.v_max = v_max
        self.center = None if center is None else np.asarray(center, dtype=float)
        self.amplitude = amplitude
        self.streams = RandomStreams(seed)

    def sample(self, j: int) -> np.ndarray:
        rng = self.streams.generator(StreamPurpose.SAMPLER, j)
        if self.center is None:
            return rng.uniform(-self.v_max, self.v_max, self.dim)
        draw = self.center + self.amplitude * rng.uniform(-1.0, 1.0, self.dim)
        return np.clip(draw, -self.v_max, self.v_max)


@dataclass
class Condition2Estimate:
    eps_min: float
    eps_max: float
    sigma_min: float
    sigma_max: float
    samples: int

    @property
    def observable(self) -> bool:
        return self.sigma_min > UNOBSERVABLE_TOL * max(1.0, self.sigma_max)


@dataclass
class ConvergenceConstants:
    eps_min: float
    eps_max: float
    sigma_min: float
    sigma_max: float
    omega: float
    nu_delta: float
    nu_Delta: float
    nu: float
    eta: float
    lambda_eta: float
    log_lambda_eta: float
    lambda_inf: float
    C: float
    log_C: float
    C1: float
    C2: float
    D: float
    log_D: float
    ell_star: float
    xi: float
    L: int
    I: int
    N: int
    exchange_rule: str = "constant"
    notes: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, float) and not math.isfinite(value):
                data[key] = repr(value)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConvergenceConstants":
        values = {}
        for key, value in data.items():
            if isinstance(value, str) and value in ("inf", "-inf", "nan"):
                value = float(value)
            values[key] = value
        return cls(**values)


@dataclass
class Theorem1Bounds:
    kappa: float
    T1: float
    T2: float
    basin_radius: float
    basin_capped: bool
    eps_condition: bool
    kappa_condition: bool

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def estimate_condition2(
    grid: GridModel,
    areas: Sequence[AreaMeasurement],
    sampler: StateSampler,
    n_samples: int,
) -> Condition2Estimate:
    """Sampled cost and singular-value extrema.

    eps(v) = sum_i ||c_tilde_i - f_tilde_i(v)||; sigma(v) are the singular
    values of the stacked whitened Jacobian. Returns empirical min/max over
    the samples (inner approximations of the true extrema).
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    dim = 2 * grid.N
    eps_values = []
    sigma_lo, sigma_hi = math.inf, 0.0
    for j in range(n_samples):
        v = sampler.sample(j)
        eps_values.append(
            sum(float(np.linalg.norm(whitened_residual(grid, a, v))) for a in areas)
        )
        blocks = [jacobian(grid, v, a.rows) * a.scale[:, None] for a in areas if a.mask.size]
        F = np.vstack(blocks) if blocks else np.zeros((0, dim))
        singular = np.linalg.svd(F, compute_uv=False) if F.size else np.zeros(0)
        smallest = float(singular[-1]) if F.shape[0] >= dim and singular.size else 0.0
        largest = float(singular[0]) if singular.size else 0.0
        sigma_lo = min(sigma_lo, smallest)
        sigma_hi = max(sigma_hi, largest)
    estimate = Condition2Estimate(
        eps_min=min(eps_values),
        eps_max=max(eps_values),
        sigma_min=sigma_lo,
        sigma_max=sigma_hi,
        samples=n_samples,
    )
    if not estimate.observable:
        logger.warning(
            f"Unobservable: sampled sigma_min = {estimate.sigma_min:.3e} "
            f"(sigma_max = {estimate.sigma_max:.3e})"
        )
    return estimate


def corollary1_constants(omega: float, eps_max: float, sigma_max: float):
    """(nu_delta, nu_Delta) = (omega (eps_max + sigma_max), 2 sigma_max omega)."""
    return omega * (eps_max + sigma_max), 2.0 * sigma_max * omega


def _log(value: float) -> float:
    return math.log(value) if value > 0 else -math.inf


def condition3_schedule(
    beta: float,
    I: int,
    L: int,
    xi: float,
    bounds: Condition2Estimate,
    omega: float,
    N: int,
    exchange_rule: str = "constant",
    updates: int = config.updates_per_snapshot,
    cap: float = config.exchange_cap,
    strict: bool = True,
) -> ConvergenceConstants:
    """All Condition-3 constants and the minimum exchange count ell_star.

    lambda_inf sums lambda_eta^(ell_k - ell_star) over the updates. Under the
    incrementing rule that is 1 / (1 - lambda_eta); under the constant rule
    every term is 1 and the sum is ``updates``.

    Raises:
        ValueError: xi outside (0, 1/2) or beta outside (0, 1).
        ExchangeBudgetExceeded: ell_star infinite or above ``cap`` (strict only).
    """
    if not 0 < xi < 0.5:
        raise ValueError(f"xi must lie in (0, 1/2), got {xi}")
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    IL = I * L
    eta = min(beta, 1.0 - beta)
    log_eta_IL = IL * math.log(eta)
    eta_IL = math.exp(log_eta_IL)
    log_lambda = math.log1p(-eta_IL) / IL if eta_IL < 1 else -math.inf
    lambda_eta = math.exp(log_lambda)
    if exchange_rule == "incrementing":
        lambda_inf = 1.0 / (1.0 - lambda_eta) if lambda_eta < 1 else math.inf
    else:
        lambda_inf = float(updates)

    sigma_min, sigma_max = bounds.sigma_min, bounds.sigma_max
    eps_min, eps_max = bounds.eps_min, bounds.eps_max
    nu_delta, nu_Delta = corollary1_constants(omega, eps_max, sigma_max)
    nu = max(nu_delta, nu_Delta)
    C1 = 2.0 * (1.0 + sigma_max * eps_max / sigma_min**2) if sigma_min > 0 else math.inf
    C2 = I / sigma_min**2 if sigma_min > 0 else math.inf

    # C = 2 I sigma_max sqrt(I (eps_max^2 + N sigma_max^2)) (1 + eta^-IL) / (1 - eta^IL)
    log_C = (
        _log(2.0 * I * sigma_max * math.sqrt(I * (eps_max**2 + N * sigma_max**2)))
        + float(np.logaddexp(0.0, -log_eta_IL))
        - math.log1p(-eta_IL)
    )
    log_D = log_C + _log(C2) + _log(nu * lambda_inf * C1 * C2 + 1.0)
    C = math.exp(log_C) if log_C < 700 else math.inf
    D = math.exp(log_D) if log_D < 700 else math.inf

    if log_lambda < 0 and math.isfinite(log_D):
        ell_star = math.ceil((math.log(xi) - math.log(4.0) - log_D) / log_lambda)
        ell_star = float(max(ell_star, 0))
    else:
        ell_star = math.inf

    notes = {
        "N": "bus count as printed in the C formula",
        "sampling": "eps and sigma bounds are sampled (empirical) extrema",
    }
    constants = ConvergenceConstants(
        eps_min=eps_min,
        eps_max=eps_max,
        sigma_min=sigma_min,
        sigma_max=sigma_max,
        omega=omega,
        nu_delta=nu_delta,
        nu_Delta=nu_Delta,
        nu=nu,
        eta=eta,
        lambda_eta=lambda_eta,
        log_lambda_eta=log_lambda,
        lambda_inf=lambda_inf,
        C=C,
        log_C=log_C,
        C1=C1,
        C2=C2,
        D=D,
        log_D=log_D,
        ell_star=ell_star,
        xi=xi,
        L=L,
        I=I,
        N=N,
        exchange_rule=exchange_rule,
        notes=notes,
    )
    if not math.isfinite(ell_star) or ell_star > cap:
        message = f"ell_star = {ell_star} exceeds the exchange cap {cap:g} (lambda_eta = {lambda_eta})"
        if strict:
            raise ExchangeBudgetExceeded(message)
        logger.warning(message)
    return constants


def theorem1_bounds(
    constants: ConvergenceConstants,
    ell_star: Optional[float] = None,
    basin_cap: float = config.basin_cap,
) -> Theorem1Bounds:
    """kappa = 4 C1 D lambda^(ell+1), T1, T2, and the initialization basin radius.

    ``ell_star`` defaults to the prescribed value; pass the exchange count
    actually used to bound a run with fewer exchanges.
    """
    ell = constants.ell_star if ell_star is None else float(ell_star)
    omega = constants.omega
    sigma_min = constants.sigma_min
    if math.isfinite(ell) and constants.log_lambda_eta < 0:
        log_kappa = (
            math.log(4.0)
            + _log(constants.C1)
            + constants.log_D
            + (ell + 1.0) * constants.log_lambda_eta
        )
        kappa = math.exp(log_kappa) if log_kappa < 700 else math.inf
    else:
        kappa = 0.0 if constants.log_lambda_eta == -math.inf else math.inf

    T1 = omega / (2.0 * sigma_min) if sigma_min > 0 else math.inf
    T2 = math.sqrt(2.0) * omega * constants.eps_min / sigma_min**2 if sigma_min > 0 else math.inf
    if omega == 0:
        basin, capped = basin_cap, True
    else:
        basin = 2.0 * sigma_min / omega - kappa
        capped = basin > basin_cap
        basin = min(basin, basin_cap)

    eps_condition = math.sqrt(2.0) * omega * constants.eps_min < 3.0 * sigma_min**2
    if T1 == 0:
        kappa_condition = math.isfinite(kappa)
    else:
        kappa_condition = kappa <= 0.1 * (1.0 - T2) ** 2 / (4.0 * T1)
    return Theorem1Bounds(kappa, T1, T2, basin, capped, eps_condition, kappa_condition)


def payload_bits(N: int, bits: int = 64) -> int:
    """Size of one packed payload [h; vec(H)] in bits."""
    return bits * (2 * N + 4 * N * N)
