# src/data/case_parser.py - MATPOWER subset, native JSON and builtin IEEE cases
"""Case-file ingestion.

Supported inputs:

* ``ieee14`` / ``case14`` and ``ieee118`` / ``case118``: PYPOWER's bundled
  case data.
* ``*.m``: MATPOWER subset. ``mpc.baseMVA``, ``mpc.bus`` and ``mpc.branch``
  are read; bus columns used are BUS_I, GS, BS, VM, VA and branch columns
  F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS.
* ``*.json``: native schema, field by field::

      {
        "name": "two_bus",            # optional
        "base_mva": 100.0,            # optional, informational
        "buses": [{"id": 1, "vm": 1.0, "va_deg": 0.0}, ...],   # vm/va optional
        "lines": [{"from": 1, "to": 2,
                   "g": 1.0, "b": -2.0,              # series admittance (p.u.)
                   "shunt_g": 0.0, "shunt_b": 0.0}]  # half shunt per end (p.u.)
      }

Features the Pi-model grid cannot hold (bus shunts, transformer taps and
phase shifts) are reported as ``UnsupportedFeature`` entries. Out-of-service,
zero-impedance and self-loop branches are dropped and reported; parallel
branches are merged by summing admittances and reported. Native JSON cases
are taken as written: self-loops, duplicate lines and non-finite admittances
there are ParseErrors.
"""
import importlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.config import config
from src.core.exceptions import ParseError, UnsupportedFeature
from src.core.grid_model import Bus, GridModel, Line
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)

# MATPOWER column positions (0-based), as in pypower.idx_bus / idx_brch
BUS_I, GS, BS, VM, VA = 0, 4, 5, 7, 8
F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10
MIN_BUS_COLUMNS = VA + 1
MIN_BRANCH_COLUMNS = BR_B + 1


@dataclass(frozen=True)
class CaseLine:
    from_id: int
    to_id: int
    series_admittance: complex
    shunt_admittance: complex = 0j


@dataclass
class CaseFile:
    name: str
    buses: List[Bus]
    lines: List[CaseLine]
    base_mva: float = 100.0
    base_state: Optional[np.ndarray] = None
    unsupported: List[UnsupportedFeature] = field(default_factory=list)
    source: str = ""

    @property
    def N(self) -> int:
        return len(self.buses)

    @property
    def E(self) -> int:
        return len(self.lines)

    def to_grid(self, convention: Optional[str] = None) -> GridModel:
        position = {bus.id: i for i, bus in enumerate(self.buses)}
        lines = [
            Line(
                position[line.from_id],
                position[line.to_id],
                line.series_admittance,
                line.shunt_admittance,
            )
            for line in self.lines
        ]
        return GridModel(self.buses, lines, convention=convention, name=self.name)

    def operating_state(self) -> np.ndarray:
        if self.base_state is not None:
            return self.base_state.copy()
        return np.concatenate([np.ones(self.N), np.zeros(self.N)])


class NativeBus(BaseModel):
    id: int
    vm: float = 1.0
    va_deg: float = 0.0


class NativeLine(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    from_id: int = Field(alias="from")
    to_id: int = Field(alias="to")
    g: float
    b: float
    shunt_g: float = 0.0
    shunt_b: float = 0.0


class NativeCase(BaseModel):
    name: str = "case"
    base_mva: float = 100.0
    buses: List[NativeBus] = Field(min_length=1)
    lines: List[NativeLine] = Field(default_factory=list)


def _position(text: str, offset: int):
    line = text.count("\n", 0, offset) + 1
    column = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, column


def _strip_comments(text: str) -> str:
    # keep offsets stable so reported positions match the original file
    return re.sub(r"%[^\n]*", lambda m: " " * len(m.group()), text)


def _read_matrix(text: str, clean: str, name: str, path: str) -> np.ndarray:
    start = re.search(rf"mpc\.{name}\s*=\s*\[", clean)
    if start is None:
        raise ParseError(f"missing 'mpc.{name} = [' block", path)
    end = clean.find("]", start.end())
    if end < 0:
        line, column = _position(text, start.start())
        raise ParseError(f"unterminated mpc.{name} matrix", path, line, column)

    rows: List[List[float]] = []
    row_offsets: List[int] = []
    current: List[float] = []
    for token in re.finditer(r"[^\s,;]+|;|\n", clean[start.end() : end]):
        offset = start.end() + token.start()
        value = token.group()
        if value in (";", "\n"):
            if current:
                rows.append(current)
                current = []
            continue
        try:
            number = float(value)
        except ValueError:
            line, column = _position(text, offset)
            raise ParseError(
                f"invalid number {value!r} in mpc.{name}", path, line, column
            ) from None
        if not current:
            row_offsets.append(offset)
        current.append(number)
    if current:
        rows.append(current)
    if not rows:
        raise ParseError(f"mpc.{name} is empty", path)
    width = len(rows[0])
    for row, offset in zip(rows, row_offsets):
        if len(row) != width:
            line, column = _position(text, offset)
            raise ParseError(
                f"mpc.{name} row has {len(row)} columns, expected {width}",
                path,
                line,
                column,
            )
    return np.array(rows, dtype=float)


def parse_matpower(path: str) -> CaseFile:
    text = Path(path).read_text(encoding="utf-8")
    clean = _strip_comments(text)
    base = re.search(r"mpc\.baseMVA\s*=\s*([^;\n]+);", clean)
    base_mva = 100.0
    if base is not None:
        try:
            base_mva = float(base.group(1))
        except ValueError:
            line, column = _position(text, base.start(1))
            raise ParseError("invalid mpc.baseMVA", path, line, column) from None
    bus = _read_matrix(text, clean, "bus", path)
    branch = _read_matrix(text, clean, "branch", path)
    return from_matrices(bus, branch, base_mva, name=Path(path).stem, source=str(path))


def from_matrices(
    bus: np.ndarray,
    branch: np.ndarray,
    base_mva: float,
    name: str,
    source: str = "",
) -> CaseFile:
    """Build a CaseFile from MATPOWER-layout bus and branch arrays."""
    bus = np.atleast_2d(np.asarray(bus, dtype=float))
    branch = np.atleast_2d(np.asarray(branch, dtype=float)) if np.size(branch) else np.zeros((0, 11))
    if bus.shape[1] < MIN_BUS_COLUMNS:
        raise ParseError(f"bus matrix needs >= {MIN_BUS_COLUMNS} columns, got {bus.shape[1]}", source)
    if branch.shape[0] and branch.shape[1] < MIN_BRANCH_COLUMNS:
        raise ParseError(
            f"branch matrix needs >= {MIN_BRANCH_COLUMNS} columns, got {branch.shape[1]}", source
        )
    unsupported: List[UnsupportedFeature] = []

    ids = [int(round(value)) for value in bus[:, BUS_I]]
    if len(set(ids)) != len(ids):
        raise ParseError("bus ids are not unique", source)
    buses = [Bus(id=bus_id) for bus_id in ids]
    for row, bus_id in zip(bus, ids):
        if row[GS] != 0 or row[BS] != 0:
            unsupported.append(
                UnsupportedFeature("bus_shunt", f"bus {bus_id}", f"GS={row[GS]:g}, BS={row[BS]:g}")
            )
    vm, va = bus[:, VM], np.deg2rad(bus[:, VA])
    base_state = np.concatenate([vm * np.cos(va), vm * np.sin(va)])

    known = set(ids)
    merged: Dict[frozenset, CaseLine] = {}
    order: List[frozenset] = []
    for index, row in enumerate(branch):
        f, t = int(round(row[F_BUS])), int(round(row[T_BUS]))
        where = f"branch {index + 1} ({f}-{t})"
        if f not in known or t not in known:
            raise ParseError(f"{where} references an unknown bus", source)
        if branch.shape[1] > BR_STATUS and row[BR_STATUS] == 0:
            unsupported.append(UnsupportedFeature("out_of_service", where, "", "dropped"))
            continue
        if f == t:
            unsupported.append(UnsupportedFeature("self_loop", where, "", "dropped"))
            continue
        r, x = row[BR_R], row[BR_X]
        if r == 0 and x == 0:
            unsupported.append(UnsupportedFeature("zero_impedance", where, "", "dropped"))
            continue
        if branch.shape[1] > TAP and row[TAP] not in (0.0, 1.0):
            unsupported.append(UnsupportedFeature("transformer_tap", where, f"ratio={row[TAP]:g}"))
        if branch.shape[1] > SHIFT and row[SHIFT] != 0:
            unsupported.append(UnsupportedFeature("phase_shift", where, f"angle={row[SHIFT]:g}"))
        y = 1.0 / complex(r, x)
        ybar = complex(0.0, row[BR_B] / 2.0)
        key = frozenset((f, t))
        if key in merged:
            previous = merged[key]
            merged[key] = CaseLine(
                previous.from_id,
                previous.to_id,
                previous.series_admittance + y,
                previous.shunt_admittance + ybar,
            )
            unsupported.append(UnsupportedFeature("parallel_branch", where, "", "merged"))
        else:
            merged[key] = CaseLine(f, t, y, ybar)
            order.append(key)
    lines = [merged[key] for key in order]

    case = CaseFile(
        name=name,
        buses=buses,
        lines=lines,
        base_mva=float(base_mva),
        base_state=base_state,
        unsupported=unsupported,
        source=source,
    )
    _log_case(case)
    return case


def parse_native_json(path: str) -> CaseFile:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as error:
        raise ParseError(error.msg, str(path), error.lineno, error.colno) from None
    try:
        native = NativeCase.model_validate(raw)
    except ValidationError as error:
        first = error.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ParseError(f"{location}: {first['msg']}", str(path)) from None

    ids = [bus.id for bus in native.buses]
    if len(set(ids)) != len(ids):
        raise ParseError("bus ids are not unique", str(path))
    known = set(ids)
    seen: Dict[frozenset, int] = {}
    lines = []
    for index, line in enumerate(native.lines):
        where = f"lines.{index} ({line.from_id}-{line.to_id})"
        if line.from_id not in known or line.to_id not in known:
            raise ParseError(f"{where} references an unknown bus", str(path))
        if line.from_id == line.to_id:
            raise ParseError(f"{where} is a self-loop", str(path))
        key = frozenset((line.from_id, line.to_id))
        if key in seen:
            raise ParseError(f"{where} duplicates lines.{seen[key]}", str(path))
        seen[key] = index
        if not all(np.isfinite([line.g, line.b, line.shunt_g, line.shunt_b])):
            raise ParseError(f"{where} has a non-finite admittance", str(path))
        lines.append(
            CaseLine(
                line.from_id,
                line.to_id,
                complex(line.g, line.b),
                complex(line.shunt_g, line.shunt_b),
            )
        )
    vm = np.array([bus.vm for bus in native.buses])
    va = np.deg2rad([bus.va_deg for bus in native.buses])
    case = CaseFile(
        name=native.name,
        buses=[Bus(id=bus_id) for bus_id in ids],
        lines=lines,
        base_mva=native.base_mva,
        base_state=np.concatenate([vm * np.cos(va), vm * np.sin(va)]),
        source=str(path),
    )
    _log_case(case)
    return case


def load_builtin(name: str) -> CaseFile:
    module_name = config.builtin_cases[name.lower()]
    module = importlib.import_module(f"pypower.{module_name}")
    ppc = getattr(module, module_name)()
    return from_matrices(
        ppc["bus"], ppc["branch"], ppc["baseMVA"], name=module_name, source=f"pypower:{module_name}"
    )


def parse_case(path) -> CaseFile:
    """Load a case by builtin name or file path (.m or .json).

    Raises:
        ParseError: unreadable or malformed input; nothing partial is returned.
    """
    key = str(path)
    if key.lower() in config.builtin_cases:
        return load_builtin(key)
    file_path = Path(key)
    if not file_path.is_file():
        raise ParseError("case file not found", key)
    suffix = file_path.suffix.lower()
    if suffix == ".m":
        return parse_matpower(key)
    if suffix == ".json":
        return parse_native_json(key)
    raise ParseError(f"unsupported case file type '{suffix}'", key)


def _log_case(case: CaseFile):
    logger.info(f"Loaded case '{case.name}': N={case.N}, E={case.E}")
    for feature in case.unsupported:
        logger.warning(
            f"Case '{case.name}': {feature.kind} at {feature.where} {feature.detail} ({feature.action})"
        )
