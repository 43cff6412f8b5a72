# src/core/measurement.py - Areas, selection masks and noisy snapshots
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.exceptions import DimensionMismatchError, NonPositiveWeightError
from src.core.grid_model import GridModel, MeasurementCategory
from src.core.power_flow import check_state, evaluate_f
from src.utils.logging_utils import get_logger
from src.utils.rng import RandomStreams, StreamPurpose

logger = get_logger(__name__)


class OwnershipPolicy(Enum):
    """Which bus owns a line-metered sensor (currents and flows)."""

    FROM_BUS = "from_bus"  # the metering end
    LOWER_INDEX_BUS = "lower_index_bus"  # both directions go to the lower position


@dataclass(frozen=True)
class AreaPartition:
    area_count: int
    bus_area: np.ndarray

    @property
    def area_buses(self) -> List[np.ndarray]:
        return [np.flatnonzero(self.bus_area == i) for i in range(self.area_count)]

    @property
    def sizes(self) -> List[int]:
        return [int(np.sum(self.bus_area == i)) for i in range(self.area_count)]

    def row_areas(
        self, grid: GridModel, policy: OwnershipPolicy = OwnershipPolicy.FROM_BUS
    ) -> np.ndarray:
        """Owning area of every ensemble row."""
        forms = grid.forms
        owner = forms.owner.copy()
        if OwnershipPolicy(policy) is OwnershipPolicy.LOWER_INDEX_BUS:
            lines = forms.far >= 0
            owner[lines] = np.minimum(forms.owner[lines], forms.far[lines])
        return self.bus_area[owner]

    def to_dict(self) -> Dict[str, Any]:
        return {"area_count": self.area_count, "bus_area": self.bus_area.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AreaPartition":
        return cls(int(data["area_count"]), np.asarray(data["bus_area"], dtype=np.int64))


@dataclass(frozen=True)
class SelectionMask:
    """Rows of the global ensemble kept by one area, split by category."""

    area: int
    voltage: np.ndarray
    current: np.ndarray
    injection: np.ndarray
    flow: np.ndarray

    def __post_init__(self):
        for name in ("voltage", "current", "injection", "flow"):
            rows = np.asarray(getattr(self, name), dtype=np.int64)
            if np.unique(rows).size != rows.size:
                raise ValueError(f"area {self.area}: duplicate rows in {name} mask")
            object.__setattr__(self, name, np.sort(rows))

    @property
    def rows(self) -> np.ndarray:
        return np.concatenate([self.voltage, self.current, self.injection, self.flow])

    @property
    def size(self) -> int:
        return int(self.rows.size)

    @property
    def pmu_rows(self) -> np.ndarray:
        return np.concatenate([self.voltage, self.current])

    def category_rows(self, category: MeasurementCategory) -> np.ndarray:
        return getattr(self, MeasurementCategory(category).name.lower())

    def selector(self, M: int) -> np.ndarray:
        """Dense T_i with one canonical basis row per kept entry."""
        T = np.zeros((self.size, M))
        T[np.arange(self.size), self.rows] = 1.0
        return T

    def to_dict(self) -> Dict[str, Any]:
        return {
            "area": self.area,
            "voltage": self.voltage.tolist(),
            "current": self.current.tolist(),
            "injection": self.injection.tolist(),
            "flow": self.flow.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SelectionMask":
        return cls(
            area=int(data["area"]),
            voltage=np.asarray(data["voltage"], dtype=np.int64),
            current=np.asarray(data["current"], dtype=np.int64),
            injection=np.asarray(data["injection"], dtype=np.int64),
            flow=np.asarray(data["flow"], dtype=np.int64),
        )


@dataclass(frozen=True)
class NoiseSpec:
    base_sigma: float
    bad_count: int = 0
    bad_variance_factor: float = 100.0
    persistent: bool = False
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.base_sigma) or self.base_sigma < 0:
            raise ValueError(f"base_sigma must be >= 0, got {self.base_sigma}")
        if self.bad_count < 0:
            raise ValueError(f"bad_count must be >= 0, got {self.bad_count}")
        if self.bad_variance_factor <= 0:
            raise ValueError("bad_variance_factor must be positive")


@dataclass
class Snapshot:
    """Noisy ensemble at one instant, with ground truth kept for evaluation."""

    t: int
    true_state: np.ndarray
    z: np.ndarray
    variances: np.ndarray
    bad_rows: np.ndarray
    masks: List[SelectionMask] = field(repr=False)

    @property
    def area_measurements(self) -> List[np.ndarray]:
        return [self.z[mask.rows] for mask in self.masks]

    def c(self, area: int) -> np.ndarray:
        return self.z[self.masks[area].rows]

    def area_variances(self, area: int) -> np.ndarray:
        return self.variances[self.masks[area].rows]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "true_state": self.true_state.tolist(),
            "z": self.z.tolist(),
            "variances": self.variances.tolist(),
            "bad_rows": self.bad_rows.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], masks: List[SelectionMask]) -> "Snapshot":
        return cls(
            t=int(data["t"]),
            true_state=np.asarray(data["true_state"], dtype=float),
            z=np.asarray(data["z"], dtype=float),
            variances=np.asarray(data["variances"], dtype=float),
            bad_rows=np.asarray(data["bad_rows"], dtype=np.int64),
            masks=masks,
        )


@dataclass
class AreaMeasurement:
    """One area's kept rows, observed values c_i and weights Gamma_i."""

    mask: SelectionMask
    c: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.c.shape != (self.mask.size,) or self.gamma.shape != (self.mask.size,):
            raise DimensionMismatchError(
                f"area {self.mask.area}: expected {self.mask.size} entries, "
                f"got c{self.c.shape} and gamma{self.gamma.shape}"
            )

    @property
    def rows(self) -> np.ndarray:
        return self.mask.rows

    @property
    def whitened(self) -> np.ndarray:
        return whiten_area(self.c, self.gamma)[0]

    @property
    def scale(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.gamma)


def partition_areas(N: int, I: int, seed: int = 0) -> AreaPartition:
    """Random disjoint bus assignment.

    Area sizes follow ceil(N/I) for the first I-1 areas and the remainder for
    the last (118 buses into 10 areas gives nine of 12 and one of 10). When
    that leaves the last area empty, sizes are as even as possible.
    """
    if I < 1:
        raise ValueError(f"area count must be >= 1, got {I}")
    if I > N:
        raise ValueError(f"area count {I} exceeds bus count {N}")
    rng = RandomStreams(seed).generator(StreamPurpose.PARTITION)
    order = rng.permutation(N)
    base = -(-N // I)
    last = N - base * (I - 1)
    if last > 0:
        sizes = [base] * (I - 1) + [last]
    else:
        sizes = [len(chunk) for chunk in np.array_split(np.arange(N), I)]
    bus_area = np.empty(N, dtype=np.int64)
    start = 0
    for area, size in enumerate(sizes):
        bus_area[order[start : start + size]] = area
        start += size
    logger.info(f"Partitioned {N} buses into {I} areas of sizes {sizes}")
    return AreaPartition(I, bus_area)


def select_measurements(
    grid: GridModel,
    partition: AreaPartition,
    fraction: float,
    pmu_areas: Iterable[int],
    seed: int = 0,
    policy: OwnershipPolicy = OwnershipPolicy.FROM_BUS,
) -> List[SelectionMask]:
    """Per-area masks: a random ``fraction`` of owned SCADA rows plus all owned
    PMU rows in ``pmu_areas``.

    Draw order: one SELECTION stream per area, one ``choice`` call each.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    pmu_areas = set(int(a) for a in pmu_areas)
    unknown = pmu_areas - set(range(partition.area_count))
    if unknown:
        raise ValueError(f"pmu_areas {sorted(unknown)} outside 0..{partition.area_count - 1}")

    streams = RandomStreams(seed)
    row_area = partition.row_areas(grid, policy)
    category = grid.forms.category
    masks = []
    for area in range(partition.area_count):
        owned = row_area == area
        rows = {}
        for cat in MeasurementCategory:
            rows[cat] = np.flatnonzero(owned & (category == int(cat)))
        if area not in pmu_areas:
            rows[MeasurementCategory.VOLTAGE] = np.empty(0, dtype=np.int64)
            rows[MeasurementCategory.CURRENT] = np.empty(0, dtype=np.int64)

        scada = np.concatenate(
            [rows[MeasurementCategory.INJECTION], rows[MeasurementCategory.FLOW]]
        )
        keep = int(np.floor(fraction * scada.size + 0.5))
        rng = streams.generator(StreamPurpose.SELECTION, area)
        chosen = np.sort(rng.choice(scada, size=keep, replace=False)) if keep else scada[:0]
        injection_section = grid.layout.section(MeasurementCategory.INJECTION)
        is_injection = (chosen >= injection_section.start) & (chosen < injection_section.stop)

        mask = SelectionMask(
            area=area,
            voltage=rows[MeasurementCategory.VOLTAGE],
            current=rows[MeasurementCategory.CURRENT],
            injection=chosen[is_injection],
            flow=chosen[~is_injection],
        )
        if mask.size == 0:
            logger.warning(f"Area {area} selected no measurements")
        masks.append(mask)
    logger.info(
        f"Selected {sum(m.size for m in masks)} of {grid.layout.M} ensemble rows "
        f"({sum(m.pmu_rows.size for m in masks)} PMU rows)"
    )
    return masks


def synthesize_snapshot(
    grid: GridModel,
    true_state,
    masks: Sequence[SelectionMask],
    noise: NoiseSpec,
    t: int = 0,
) -> Snapshot:
    """z = f(v_true) + r with Gaussian r and variance-inflated bad entries.

    Draw order: NOISE stream keyed by t draws M standard normals; BAD_DATA
    stream (keyed by t, or by 0 when persistent) draws the bad rows among the
    union of selected rows.
    """
    v = check_state(grid, true_state)
    M = grid.layout.M
    streams = RandomStreams(noise.seed)
    sigma2 = noise.base_sigma**2
    variances = np.full(M, sigma2)
    standard = streams.generator(StreamPurpose.NOISE, t).standard_normal(M)

    selected = np.unique(np.concatenate([m.rows for m in masks])) if masks else np.empty(0, int)
    if noise.bad_count > selected.size:
        raise ValueError(
            f"bad_count {noise.bad_count} exceeds the {selected.size} selected measurements"
        )
    bad_key = 0 if noise.persistent else t
    bad_rng = streams.generator(StreamPurpose.BAD_DATA, bad_key)
    bad_rows = np.sort(bad_rng.choice(selected, size=noise.bad_count, replace=False))
    variances[bad_rows] = noise.bad_variance_factor * sigma2

    z = evaluate_f(grid, v) + np.sqrt(variances) * standard
    return Snapshot(
        t=t,
        true_state=v.copy(),
        z=z,
        variances=variances,
        bad_rows=bad_rows.astype(np.int64),
        masks=list(masks),
    )


def whiten_area(c, gamma) -> Tuple[np.ndarray, bool]:
    """c_tilde = Gamma^{-1/2} c for a diagonal Gamma given by its diagonal."""
    c = np.asarray(c, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if c.shape != gamma.shape:
        raise DimensionMismatchError(f"c{c.shape} and gamma{gamma.shape} differ")
    if not np.all(np.isfinite(gamma)) or np.any(gamma <= 0):
        raise NonPositiveWeightError("weight diagonal must be positive and finite")
    return c / np.sqrt(gamma), True


def instrumented_coordinates(grid: GridModel, masks: Sequence[SelectionMask]) -> np.ndarray:
    """Boolean mask over the 2N state coordinates measured by some PMU."""
    covered = np.zeros(2 * grid.N, dtype=bool)
    for mask in masks:
        covered[mask.voltage] = True
    return covered


def prior_gammas(masks: Sequence[SelectionMask], sigma: float, floor: float) -> List[np.ndarray]:
    """Base variances max(sigma^2, floor), one array per area."""
    value = max(sigma**2, floor)
    return [np.full(mask.size, value) for mask in masks]


def build_areas(
    masks: Sequence[SelectionMask],
    snapshot: Snapshot,
    gammas: Optional[Sequence[np.ndarray]],
) -> List[AreaMeasurement]:
    return [
        AreaMeasurement(mask, snapshot.c(i), gammas[i]) for i, mask in enumerate(masks)
    ]
