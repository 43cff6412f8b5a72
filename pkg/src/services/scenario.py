# src/services/scenario.py - Scenario model and loader (TOML / JSON / YAML)
"""Per-run configuration.

Keys (all optional except ``case``)::

    name, case, convention, areas, measurement_fraction, pmu_areas, sigma,
    bad_count, bad_factor, bad_persistent, snapshots, trajectory,
    trajectory_amplitude, ownership, seed,
    [gossip]    mode, beta, link_failure_p, alpha, overlay_edges
    [darse]     updates, exchanges, exchange_rule, step_tol, init_mode,
                init_exchanges, singular_policy, track_discrepancy
    [gn]        max_iters, step_tol, v_max, ridge_scale, covariance_floor,
                second_pass, warm_start
    [diffusion] step_sizes, rounds

A relative ``case`` path is resolved against the scenario file's directory.
"""
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config.config import config
from src.core.exceptions import ScenarioError
from src.estimation.baseline_diffusion import DiffusionConfig
from src.estimation.central_estimator import GNOptions
from src.estimation.ggn_darse import DarseConfig
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)

Algorithm = Literal["darse", "central_gn", "central_gn_noreweight", "diffusion"]
ALGORITHMS: Tuple[str, ...] = ("darse", "central_gn", "central_gn_noreweight", "diffusion")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GossipSettings(_Section):
    mode: Literal["ure", "synchronous", "exact"] = "ure"
    beta: float = Field(config.gossip_beta, gt=0, lt=1)
    link_failure_p: float = Field(0.0, ge=0, lt=1)
    alpha: float = Field(config.sync_alpha, gt=0, le=1)
    overlay_edges: Optional[List[Tuple[int, int]]] = None  # None: complete graph


class GNSettings(_Section):
    max_iters: int = Field(config.updates_per_snapshot, ge=1)
    step_tol: float = Field(config.step_tol, gt=0)
    v_max: float = Field(config.v_max, gt=0)
    ridge_scale: float = Field(config.ridge_scale, gt=0)
    covariance_floor: float = Field(config.covariance_floor, gt=0)
    second_pass: bool = False
    warm_start: bool = True

    def to_options(self) -> GNOptions:
        return GNOptions(**self.model_dump())


class DarseSettings(_Section):
    updates: int = Field(config.updates_per_snapshot, ge=1)
    exchanges: int = Field(config.exchanges_per_update, ge=0)
    exchange_rule: Literal["constant", "incrementing"] = "constant"
    step_tol: float = Field(config.step_tol, gt=0)
    init_mode: Literal["pmu_decentralized", "pmu_centralized", "previous_estimate", "flat"] = (
        "pmu_decentralized"
    )
    init_exchanges: Optional[int] = Field(None, ge=0)
    singular_policy: Literal["freeze", "ridge"] = "freeze"
    track_discrepancy: bool = False

    def to_config(self, gn: GNOptions) -> DarseConfig:
        return DarseConfig(gn=gn, **self.model_dump())


class DiffusionSettings(_Section):
    step_sizes: List[float] = Field(default_factory=lambda: list(config.diffusion_step_sizes))
    rounds: int = Field(config.diffusion_rounds, ge=0)

    @model_validator(mode="after")
    def _positive_steps(self):
        if not self.step_sizes or any(step <= 0 for step in self.step_sizes):
            raise ValueError("diffusion step_sizes must be a non-empty list of positive values")
        return self

    def configs(self, v_max: float) -> List[DiffusionConfig]:
        return [DiffusionConfig(alpha0=a, rounds=self.rounds, v_max=v_max) for a in self.step_sizes]


class Scenario(_Section):
    name: str = "scenario"
    case: str
    convention: Optional[Literal["paper", "standard"]] = None
    areas: int = Field(config.area_count, ge=1)
    measurement_fraction: float = Field(config.measurement_fraction, gt=0, le=1)
    pmu_areas: List[int] = Field(default_factory=lambda: list(config.pmu_areas))
    sigma: float = Field(config.base_sigma, ge=0)
    bad_count: int = Field(0, ge=0)
    bad_factor: float = Field(config.bad_variance_factor, gt=0)
    bad_persistent: bool = False
    snapshots: int = Field(1, ge=1)
    trajectory: Literal["static", "perturb"] = "static"
    trajectory_amplitude: float = Field(config.trajectory_amplitude, ge=0)
    ownership: Literal["from_bus", "lower_index_bus"] = "from_bus"
    seed: int = Field(config.default_seed, ge=0)
    gossip: GossipSettings = Field(default_factory=GossipSettings)
    darse: DarseSettings = Field(default_factory=DarseSettings)
    gn: GNSettings = Field(default_factory=GNSettings)
    diffusion: DiffusionSettings = Field(default_factory=DiffusionSettings)

    @model_validator(mode="after")
    def _check_areas(self):
        bad = [a for a in self.pmu_areas if not 0 <= a < self.areas]
        if bad:
            raise ValueError(f"pmu_areas {bad} outside 0..{self.areas - 1}")
        if self.gossip.overlay_edges is not None:
            for i, j in self.gossip.overlay_edges:
                if i == j or not (0 <= i < self.areas and 0 <= j < self.areas):
                    raise ValueError(f"overlay edge ({i}, {j}) is invalid for {self.areas} areas")
        return self

    @property
    def is_builtin_case(self) -> bool:
        return self.case.lower() in config.builtin_cases

    def with_seed(self, seed: int) -> "Scenario":
        return self.model_copy(update={"seed": seed})

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _read_raw(path: Path) -> Dict[str, Any]:
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            with open(path, "rb") as handle:
                return tomllib.load(handle)
        if suffix == ".json":
            with open(path, "r", encoding="utf-8") as handle:
                return json.load(handle)
        if suffix in (".yaml", ".yml"):
            with open(path, "r", encoding="utf-8") as handle:
                return yaml.safe_load(handle) or {}
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise ScenarioError(f"{path}: {e}") from e
    raise ScenarioError(f"{path}: unsupported scenario format '{suffix}' (toml, json, yaml)")


def load_scenario(path, overrides: Optional[Dict[str, Any]] = None) -> Scenario:
    """Read, merge top-level ``overrides`` (e.g. CLI flags) and validate."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    raw = _read_raw(path)
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be a table/object")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    try:
        scenario = Scenario.model_validate(raw)
    except ValidationError as e:
        raise ScenarioError(f"{path}: {e}") from e

    if not scenario.is_builtin_case:
        case_path = Path(scenario.case)
        if not case_path.is_absolute():
            case_path = (path.parent / case_path).resolve()
        if not case_path.is_file():
            raise ScenarioError(f"{path}: case file not found: {case_path}")
        scenario = scenario.model_copy(update={"case": str(case_path)})
    logger.info(f"Loaded scenario '{scenario.name}' from {path} (case {scenario.case})")
    return scenario
