# src/core/exceptions.py - Error hierarchy shared by the simulator
from dataclasses import dataclass
from typing import Any, Dict, Optional


class DarseError(Exception):
    """Base class for every error raised by the simulator."""


class DimensionMismatchError(DarseError, ValueError):
    """A vector or matrix has the wrong shape."""


class GridValidationError(DarseError, ValueError):
    """The grid description violates a topology or admittance rule."""


class BusIndexError(GridValidationError, IndexError):
    """A bus position is outside 0..N-1."""


class NonPositiveWeightError(DarseError, ValueError):
    """A weight (variance) diagonal entry is zero, negative or not finite."""


class SingularHessianError(DarseError):
    """The Gauss-Newton Hessian could not be factorized."""

    def __init__(self, rank: int, dim: int, message: Optional[str] = None):
        self.rank = rank
        self.dim = dim
        super().__init__(
            message
            or f"Gauss-Newton Hessian is singular: rank {rank} of {dim} "
            f"(deficiency {dim - rank})"
        )


class SingularLocalHessianError(SingularHessianError):
    """An agent's gossip-mixed Hessian could not be factorized."""

    def __init__(self, agent: int, rank: int, dim: int):
        self.agent = agent
        super().__init__(
            rank,
            dim,
            f"Agent {agent}: mixed Hessian is singular, rank {rank} of {dim}",
        )


class ParseError(DarseError):
    """A case file could not be parsed. No partial model is returned."""

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.path = path
        self.line = line
        self.column = column
        where = path or "<input>"
        if line is not None:
            where = f"{where}:{line}:{column or 0}"
        super().__init__(f"{where}: {message}")


class ScenarioError(DarseError, ValueError):
    """A scenario file is missing, malformed or out of range."""


class ExchangeBudgetExceeded(DarseError):
    """The prescribed exchange count is infinite or above the configured cap."""


class RunLockError(DarseError):
    """Another run already holds the output directory."""


@dataclass(frozen=True)
class UnsupportedFeature:
    """A case-file feature that the Pi-model grid cannot represent."""

    kind: str
    where: str
    detail: str = ""
    action: str = "ignored"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "where": self.where,
            "detail": self.detail,
            "action": self.action,
        }
