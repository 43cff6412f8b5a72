# src/core/grid_model.py - Grid topology, admittances and measurement forms
"""Grid topology and the constant matrices behind every measurement.

A state vector ``v`` has length 2N with layout ``[Re V_0..Re V_{N-1},
Im V_0..Im V_{N-1}]``. Every entry of the measurement ensemble is either a
linear form ``lin_r . v`` (voltages, currents) or a quadratic form
``v^T A_r v`` whose matrix ``A_r`` has nonzeros only in rows ``n`` and
``N + n`` of the metering bus ``n``. Rows ``n`` and ``N + n`` of ``A_r``
are kept as two sparse row vectors (``upper`` and ``lower``) so that the
full ensemble never needs a dense 2N x 2N matrix per entry::

    f_r(v) = lin_r . v + v[n] * (upper_r . v) + v[N + n] * (lower_r . v)

Ensemble order (frozen, see ``EnsembleLayout``):

* voltages: ``Re V_0..Re V_{N-1}, Im V_0..Im V_{N-1}``
* currents: real part I for every directed line, then imaginary part J
* injections: ``P_0..P_{N-1}`` then ``Q_0..Q_{N-1}``
* flows: ``P`` for every directed line, then ``Q``

Directed lines are every line oriented low-to-high bus position in line
order, followed by every line oriented high-to-low. A directed line
``(n, m)`` is metered at bus ``n``.
"""
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import scipy.sparse as sp

from config.config import config
from src.core.exceptions import BusIndexError, GridValidationError
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)


class AdmittanceConvention(str, Enum):
    """Sign of the bus self-admittance.

    ``paper``: off-diagonal ``-Y_nm``, diagonal ``-sum(Ybar_nm + Y_nm)``.
    ``standard``: off-diagonal ``-Y_nm``, diagonal ``+sum(Ybar_nm + Y_nm)``.
    """

    PAPER = "paper"
    STANDARD = "standard"


class MeasurementCategory(IntEnum):
    VOLTAGE = 0
    CURRENT = 1
    INJECTION = 2
    FLOW = 3

    @property
    def is_pmu(self) -> bool:
        return self in (MeasurementCategory.VOLTAGE, MeasurementCategory.CURRENT)


@dataclass(frozen=True)
class Bus:
    """A grid bus. ``id`` is the external number from the case file."""

    id: int
    name: Optional[str] = None


@dataclass(frozen=True)
class Line:
    """Pi-model line between bus positions ``from_bus`` and ``to_bus``.

    ``shunt_admittance`` is the half shunt attached at each end.
    """

    from_bus: int
    to_bus: int
    series_admittance: complex
    shunt_admittance: complex = 0j


@dataclass(frozen=True)
class EnsembleLayout:
    """Section offsets of the measurement ensemble (M = 4N + 8E)."""

    N: int
    E: int

    @property
    def M(self) -> int:
        return 4 * self.N + 8 * self.E

    def offset(self, category: MeasurementCategory) -> int:
        return {
            MeasurementCategory.VOLTAGE: 0,
            MeasurementCategory.CURRENT: 2 * self.N,
            MeasurementCategory.INJECTION: 2 * self.N + 4 * self.E,
            MeasurementCategory.FLOW: 4 * self.N + 4 * self.E,
        }[MeasurementCategory(category)]

    def length(self, category: MeasurementCategory) -> int:
        category = MeasurementCategory(category)
        if category in (MeasurementCategory.VOLTAGE, MeasurementCategory.INJECTION):
            return 2 * self.N
        return 4 * self.E

    def section(self, category: MeasurementCategory) -> slice:
        start = self.offset(category)
        return slice(start, start + self.length(category))

    def category_of(self, row: int) -> MeasurementCategory:
        if not 0 <= row < self.M:
            raise IndexError(f"row {row} outside ensemble of length {self.M}")
        for category in reversed(MeasurementCategory):
            if row >= self.offset(category):
                return category
        raise AssertionError("unreachable")

    def to_dict(self) -> Dict[str, int]:
        return {
            "N": self.N,
            "E": self.E,
            "M": self.M,
            **{
                f"{category.name.lower()}_offset": self.offset(category)
                for category in MeasurementCategory
            },
        }


@dataclass(frozen=True)
class FormRows:
    """A row subset of the quadratic form set (one area's view)."""

    rows: np.ndarray
    lin: sp.csr_matrix
    upper: sp.csr_matrix
    lower: sp.csr_matrix
    pivot_a: np.ndarray
    pivot_b: np.ndarray

    @property
    def size(self) -> int:
        return int(self.rows.size)


@dataclass
class QuadraticFormSet:
    """Sparse row representation of every ensemble entry."""

    layout: EnsembleLayout
    lin: sp.csr_matrix
    upper: sp.csr_matrix
    lower: sp.csr_matrix
    pivot_a: np.ndarray
    pivot_b: np.ndarray
    owner: np.ndarray
    far: np.ndarray
    category: np.ndarray
    _subsets: Dict[bytes, FormRows] = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return 2 * self.layout.N

    def subset(self, rows: Optional[Sequence[int]] = None) -> FormRows:
        if rows is None:
            rows = np.arange(self.layout.M)
        rows = np.asarray(rows, dtype=np.int64)
        key = rows.tobytes()
        cached = self._subsets.get(key)
        if cached is None:
            if rows.size and (rows.min() < 0 or rows.max() >= self.layout.M):
                raise IndexError(f"row index outside ensemble of length {self.layout.M}")
            cached = FormRows(
                rows=rows,
                lin=self.lin[rows],
                upper=self.upper[rows],
                lower=self.lower[rows],
                pivot_a=self.pivot_a[rows],
                pivot_b=self.pivot_b[rows],
            )
            self._subsets[key] = cached
        return cached

    def quadratic_matrix(self, row: int) -> np.ndarray:
        """Dense 2N x 2N matrix A_r of a quadratic entry (zero for linear rows)."""
        dim = self.dim
        dense = np.zeros((dim, dim))
        dense[self.pivot_a[row]] += self.upper[row].toarray().ravel()
        dense[self.pivot_b[row]] += self.lower[row].toarray().ravel()
        return dense

    def linear_matrix(self, row: int) -> np.ndarray:
        """Dense block-diagonal form C of a current entry.

        The entry equals ``(1_2 kron e_n)^T C v``: row ``n`` holds the real-part
        columns of ``lin_r`` and row ``N + n`` the imaginary-part columns.
        """
        N = self.layout.N
        dense = np.zeros((2 * N, 2 * N))
        lin = self.lin[row].toarray().ravel()
        n = self.pivot_a[row]
        dense[n, :N] = lin[:N]
        dense[N + n, N:] = lin[N:]
        return dense

    def symmetrized(self, row: int) -> np.ndarray:
        A = self.quadratic_matrix(row)
        return A + A.T

    def lipschitz_stack(self) -> sp.csr_matrix:
        """Vertical stack of S_r = A_r + A_r^T over all quadratic entries."""
        dim = self.dim
        blocks = []
        for matrix, pivots in ((self.upper, self.pivot_a), (self.lower, self.pivot_b)):
            coo = matrix.tocoo()
            base = coo.row.astype(np.int64) * dim
            piv = pivots[coo.row]
            # A_r contribution at (pivot, col) and its transpose at (col, pivot)
            blocks.append((base + piv, coo.col, coo.data))
            blocks.append((base + coo.col, piv, coo.data))
        rows = np.concatenate([b[0] for b in blocks])
        cols = np.concatenate([b[1] for b in blocks])
        vals = np.concatenate([b[2] for b in blocks])
        shape = (self.layout.M * dim, dim)
        return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


class GridModel:
    """Immutable bus/line description of a grid."""

    def __init__(
        self,
        buses: Iterable[Bus],
        lines: Iterable[Line],
        convention: Optional[str] = None,
        name: str = "grid",
    ):
        self.buses: Tuple[Bus, ...] = tuple(buses)
        self.lines: Tuple[Line, ...] = tuple(
            Line(
                int(line.from_bus),
                int(line.to_bus),
                complex(line.series_admittance),
                complex(line.shunt_admittance),
            )
            for line in lines
        )
        self.convention = AdmittanceConvention(
            convention or config.admittance_convention
        )
        self.name = name
        self._validate()

        self.N = len(self.buses)
        self.E = len(self.lines)
        incident: List[List[int]] = [[] for _ in range(self.N)]
        for index, line in enumerate(self.lines):
            incident[line.from_bus].append(index)
            incident[line.to_bus].append(index)
        self.incident: Tuple[Tuple[int, ...], ...] = tuple(tuple(x) for x in incident)
        self._pairs = {
            frozenset((line.from_bus, line.to_bus)): index
            for index, line in enumerate(self.lines)
        }

        if self.N > 1 and not nx.is_connected(self.graph()):
            logger.warning(
                f"Grid '{self.name}' is not connected "
                f"({nx.number_connected_components(self.graph())} components)"
            )

    @classmethod
    def from_edges(
        cls,
        n_buses: int,
        edges: Iterable[Tuple[int, int, complex, complex]],
        convention: Optional[str] = None,
        name: str = "grid",
    ) -> "GridModel":
        """Build a grid with bus ids 1..n_buses from (n, m, Y, Ybar) tuples."""
        buses = [Bus(id=i + 1) for i in range(n_buses)]
        lines = [Line(n, m, y, ybar) for n, m, y, ybar in edges]
        return cls(buses, lines, convention=convention, name=name)

    def _validate(self):
        if not self.buses:
            raise GridValidationError("grid has no buses")
        ids = [bus.id for bus in self.buses]
        if len(set(ids)) != len(ids):
            raise GridValidationError("bus ids are not unique")
        n_buses = len(self.buses)
        seen = set()
        for index, line in enumerate(self.lines):
            for end in (line.from_bus, line.to_bus):
                if not 0 <= end < n_buses:
                    raise BusIndexError(
                        f"line {index} references bus position {end} "
                        f"outside 0..{n_buses - 1}"
                    )
            if line.from_bus == line.to_bus:
                raise GridValidationError(f"line {index} is a self-loop at bus {line.from_bus}")
            pair = frozenset((line.from_bus, line.to_bus))
            if pair in seen:
                raise GridValidationError(
                    f"line {index} duplicates the pair {sorted(pair)}"
                )
            seen.add(pair)
            values = (line.series_admittance, line.shunt_admittance)
            if not all(np.isfinite(v.real) and np.isfinite(v.imag) for v in values):
                raise GridValidationError(f"line {index} has a non-finite admittance")

    def check_bus(self, n: int) -> int:
        if not 0 <= int(n) < self.N:
            raise BusIndexError(f"bus position {n} outside 0..{self.N - 1}")
        return int(n)

    def incident_count(self, n: int) -> int:
        return len(self.incident[self.check_bus(n)])

    def line_index(self, n: int, m: int) -> int:
        index = self._pairs.get(frozenset((int(n), int(m))))
        if index is None:
            raise GridValidationError(f"no line between bus positions {n} and {m}")
        return index

    def directed_index(self, n: int, m: int) -> int:
        """Position of directed line (n, m) within a per-direction block of 2E."""
        index = self.line_index(n, m)
        return index if n < m else self.E + index

    def directed_lines(self) -> List[Tuple[int, int, int]]:
        forward = []
        reverse = []
        for index, line in enumerate(self.lines):
            low, high = sorted((line.from_bus, line.to_bus))
            forward.append((low, high, index))
            reverse.append((high, low, index))
        return forward + reverse

    def graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(len(self.buses)))
        graph.add_edges_from((line.from_bus, line.to_bus) for line in self.lines)
        return graph

    def with_convention(self, convention: str) -> "GridModel":
        return GridModel(self.buses, self.lines, convention=convention, name=self.name)

    @property
    def layout(self) -> EnsembleLayout:
        return EnsembleLayout(self.N, self.E)

    @property
    def flat_profile(self) -> np.ndarray:
        return np.concatenate([np.ones(self.N), np.zeros(self.N)])

    @cached_property
    def admittance(self) -> np.ndarray:
        return build_admittance(self)

    @cached_property
    def forms(self) -> QuadraticFormSet:
        return build_quadratic_forms(self)

    def __repr__(self):
        return (
            f"GridModel(name={self.name!r}, N={self.N}, E={self.E}, "
            f"convention={self.convention.value})"
        )


def build_admittance(grid: GridModel) -> np.ndarray:
    """Complex N x N bus admittance matrix in the grid's sign convention."""
    N = len(grid.buses)
    Y = np.zeros((N, N), dtype=complex)
    sign = -1.0 if grid.convention is AdmittanceConvention.PAPER else 1.0
    for line in grid.lines:
        n, m = line.from_bus, line.to_bus
        y, ybar = line.series_admittance, line.shunt_admittance
        Y[n, m] -= y
        Y[m, n] -= y
        Y[n, n] += sign * (ybar + y)
        Y[m, m] += sign * (ybar + y)
    return Y


class _RowBuilder:
    def __init__(self):
        self.rows: List[int] = []
        self.cols: List[int] = []
        self.vals: List[float] = []

    def put(self, row: int, cols: np.ndarray, vals: np.ndarray):
        keep = vals != 0
        self.rows.extend([row] * int(keep.sum()))
        self.cols.extend(cols[keep].tolist())
        self.vals.extend(vals[keep].tolist())

    def matrix(self, shape) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.asarray(self.vals, dtype=float), (self.rows, self.cols)), shape=shape
        )


def _real_imag(cols: np.ndarray, values: np.ndarray, N: int):
    """Split complex row entries into (real-column, imag-column) index arrays."""
    return cols, cols + N, values.real, values.imag


def build_quadratic_forms(grid: GridModel) -> QuadraticFormSet:
    """Assemble lin/upper/lower rows for the whole ensemble."""
    N, E = grid.N, grid.E
    layout = grid.layout
    M = layout.M
    dim = 2 * N
    lin, upper, lower = _RowBuilder(), _RowBuilder(), _RowBuilder()
    pivot_a = np.zeros(M, dtype=np.int64)
    pivot_b = np.zeros(M, dtype=np.int64)
    owner = np.zeros(M, dtype=np.int64)
    far = np.full(M, -1, dtype=np.int64)
    category = np.zeros(M, dtype=np.int8)

    def mark(row, n, m, cat):
        pivot_a[row] = n
        pivot_b[row] = N + n
        owner[row] = n
        far[row] = m
        category[row] = int(cat)

    # voltages
    for coord in range(dim):
        lin.put(coord, np.array([coord]), np.array([1.0]))
        mark(coord, coord % N, -1, MeasurementCategory.VOLTAGE)

    directed = grid.directed_lines()
    line_rows = []
    for n, m, index in directed:
        line = grid.lines[index]
        cols = np.array([n, m])
        vals = np.array(
            [line.series_admittance + line.shunt_admittance, -line.series_admittance]
        )
        line_rows.append((n, m, cols, vals))

    Y = grid.admittance
    bus_rows = []
    for n in range(N):
        cols = np.flatnonzero(Y[n])
        bus_rows.append((n, cols, Y[n, cols]))

    def put_power(row, n, cols, vals):
        re_cols, im_cols, g, b = _real_imag(cols, vals, N)
        both = np.concatenate([re_cols, im_cols])
        # P rows: upper [g, -b], lower [b, g]
        upper.put(row, both, np.concatenate([g, -b]))
        lower.put(row, both, np.concatenate([b, g]))

    def put_reactive(row, n, cols, vals):
        re_cols, im_cols, g, b = _real_imag(cols, vals, N)
        both = np.concatenate([re_cols, im_cols])
        # Q rows: upper [-b, -g], lower [g, -b]
        upper.put(row, both, np.concatenate([-b, -g]))
        lower.put(row, both, np.concatenate([g, -b]))

    # currents: I block then J block
    offset = layout.offset(MeasurementCategory.CURRENT)
    for d, (n, m, cols, vals) in enumerate(line_rows):
        re_cols, im_cols, g, b = _real_imag(cols, vals, N)
        both = np.concatenate([re_cols, im_cols])
        row_i = offset + d
        row_j = offset + 2 * E + d
        lin.put(row_i, both, np.concatenate([g, -b]))
        lin.put(row_j, both, np.concatenate([b, g]))
        mark(row_i, n, m, MeasurementCategory.CURRENT)
        mark(row_j, n, m, MeasurementCategory.CURRENT)

    # injections: all P then all Q
    offset = layout.offset(MeasurementCategory.INJECTION)
    for n, cols, vals in bus_rows:
        put_power(offset + n, n, cols, vals)
        put_reactive(offset + N + n, n, cols, vals)
        mark(offset + n, n, -1, MeasurementCategory.INJECTION)
        mark(offset + N + n, n, -1, MeasurementCategory.INJECTION)

    # flows: all P then all Q
    offset = layout.offset(MeasurementCategory.FLOW)
    for d, (n, m, cols, vals) in enumerate(line_rows):
        put_power(offset + d, n, cols, vals)
        put_reactive(offset + 2 * E + d, n, cols, vals)
        mark(offset + d, n, m, MeasurementCategory.FLOW)
        mark(offset + 2 * E + d, n, m, MeasurementCategory.FLOW)

    shape = (M, dim)
    forms = QuadraticFormSet(
        layout=layout,
        lin=lin.matrix(shape),
        upper=upper.matrix(shape),
        lower=lower.matrix(shape),
        pivot_a=pivot_a,
        pivot_b=pivot_b,
        owner=owner,
        far=far,
        category=category,
    )
    logger.debug(f"Built {M} measurement forms for {grid!r}")
    return forms


def bus_matrices(grid: GridModel, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Dense (N_P,n, N_Q,n) for bus position n."""
    n = grid.check_bus(n)
    offset = grid.layout.offset(MeasurementCategory.INJECTION)
    forms = grid.forms
    return forms.quadratic_matrix(offset + n), forms.quadratic_matrix(offset + grid.N + n)


def line_matrices(
    grid: GridModel, n: int, m: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Dense (E_P,nm, E_Q,nm, C_I,nm, C_J,nm) for the line metered at bus n."""
    grid.check_bus(n)
    grid.check_bus(m)
    d = grid.directed_index(n, m)
    E = grid.E
    forms = grid.forms
    flow = grid.layout.offset(MeasurementCategory.FLOW)
    current = grid.layout.offset(MeasurementCategory.CURRENT)
    return (
        forms.quadratic_matrix(flow + d),
        forms.quadratic_matrix(flow + 2 * E + d),
        forms.linear_matrix(current + d),
        forms.linear_matrix(current + 2 * E + d),
    )
