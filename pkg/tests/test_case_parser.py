# test_case_parser.py - MATPOWER subset, native JSON and builtin cases
"""
Tests for case ingestion: builtin IEEE cases, the MATPOWER subset with its
dropped/merged/reported branches, the native JSON schema and error
positions for malformed input.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from src.core.exceptions import ParseError
from src.data.case_parser import parse_case

CASES_DIR = Path(__file__).resolve().parents[1] / "config" / "cases"

TINY_CASE = """function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1.02\t0\t135\t1\t1.1\t0.9;
\t2\t1\t0\t0\t0\t0\t1\t1.0\t-3\t135\t1\t1.1\t0.9;   % load bus
\t3\t1\t0\t0\t0\t0\t1\t0.99\t-5\t135\t1\t1.1\t0.9;
];
mpc.branch = [
\t1\t2\t0.01\t0.1\t0.02\t0\t0\t0\t0\t0\t1;
\t1\t2\t0.01\t0.1\t0.02\t0\t0\t0\t0\t0\t1;
\t2\t3\t0.02\t0.2\t0\t0\t0\t0\t0\t0\t1;
\t1\t3\t0.02\t0.2\t0\t0\t0\t0\t0\t0\t0;
];
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_native_two_bus_case():
    case = parse_case(CASES_DIR / "two_bus.json")
    assert case.name == "two_bus"
    assert (case.N, case.E) == (2, 1)
    line = case.lines[0]
    assert line.series_admittance == complex(1.0, -10.0)
    assert line.shunt_admittance == complex(0.0, 0.01)
    state = case.operating_state()
    assert np.hypot(state[1], state[3]) == pytest.approx(0.98)
    assert np.degrees(np.arctan2(state[3], state[1])) == pytest.approx(-2.5)


def test_builtin_ieee14():
    case = parse_case("ieee14")
    grid = case.to_grid()
    assert (grid.N, grid.E) == (14, 20)
    kinds = {feature.kind for feature in case.unsupported}
    assert {"bus_shunt", "transformer_tap"} <= kinds
    assert case.operating_state()[0] == pytest.approx(1.06)


def test_builtin_ieee118_merges_parallel_branches():
    case = parse_case("ieee118")
    assert case.N == 118
    assert case.E == 179
    assert sum(f.kind == "parallel_branch" for f in case.unsupported) == 7


def test_matpower_subset(tmp_path):
    case = parse_case(_write(tmp_path, "tiny.m", TINY_CASE))
    assert case.name == "tiny"
    assert (case.N, case.E) == (3, 2)
    merged = case.lines[0]
    assert (merged.from_id, merged.to_id) == (1, 2)
    assert merged.series_admittance == pytest.approx(2.0 / complex(0.01, 0.1))
    assert merged.shunt_admittance == pytest.approx(0.02j)
    actions = {(f.kind, f.action) for f in case.unsupported}
    assert actions == {("parallel_branch", "merged"), ("out_of_service", "dropped")}
    assert case.operating_state()[0] == pytest.approx(1.02)


def test_case_ids_map_to_positions(tmp_path):
    data = {
        "buses": [{"id": 10}, {"id": 20}, {"id": 30}],
        "lines": [{"from": 30, "to": 10, "g": 1.0, "b": -5.0}],
    }
    grid = parse_case(_write(tmp_path, "ids.json", json.dumps(data))).to_grid()
    assert (grid.lines[0].from_bus, grid.lines[0].to_bus) == (2, 0)
    assert [bus.id for bus in grid.buses] == [10, 20, 30]


def test_malformed_number_reports_position(tmp_path):
    text = TINY_CASE.replace("1.0\t-3", "1.0x\t-3")
    with pytest.raises(ParseError) as excinfo:
        parse_case(_write(tmp_path, "bad.m", text))
    error = excinfo.value
    assert error.line == 5
    assert error.column == text.splitlines()[4].index("1.0x") + 1
    assert "1.0x" in str(error)


def test_ragged_row_reports_line(tmp_path):
    text = TINY_CASE.replace("\t0\t0\t0\t0\t0\t1;\n\t2\t3", "\t0\t0\t0\t0\t1;\n\t2\t3")
    with pytest.raises(ParseError) as excinfo:
        parse_case(_write(tmp_path, "ragged.m", text))
    assert excinfo.value.line == 10


def test_missing_branch_block(tmp_path):
    text = TINY_CASE.split("mpc.branch")[0]
    with pytest.raises(ParseError, match="mpc.branch"):
        parse_case(_write(tmp_path, "nobranch.m", text))


def test_invalid_json_reports_position(tmp_path):
    with pytest.raises(ParseError) as excinfo:
        parse_case(_write(tmp_path, "broken.json", '{\n  "buses": [\n'))
    assert excinfo.value.line is not None


@pytest.mark.parametrize(
    "data, fragment",
    [
        ({"buses": []}, "buses"),
        ({"buses": [{"id": 1}], "lines": [{"from": 1, "to": 3, "g": 1, "b": -1}]}, "unknown bus"),
        ({"buses": [{"id": 1}, {"id": 1}]}, "unique"),
        (
            {"buses": [{"id": 1}, {"id": 2}], "lines": [{"from": 2, "to": 2, "g": 1, "b": -1}]},
            "lines.0 .* self-loop",
        ),
        (
            {
                "buses": [{"id": 1}, {"id": 2}],
                "lines": [
                    {"from": 1, "to": 2, "g": 1, "b": -1},
                    {"from": 2, "to": 1, "g": 2, "b": -3},
                ],
            },
            "lines.1 .* duplicates lines.0",
        ),
        (
            {
                "buses": [{"id": 1}, {"id": 2}],
                "lines": [{"from": 1, "to": 2, "g": float("inf"), "b": -1}],
            },
            "non-finite",
        ),
    ],
)
def test_invalid_native_cases(tmp_path, data, fragment):
    with pytest.raises(ParseError, match=fragment):
        parse_case(_write(tmp_path, "case.json", json.dumps(data)))


def test_unknown_file_type(tmp_path):
    with pytest.raises(ParseError, match="unsupported case file type"):
        parse_case(_write(tmp_path, "case.txt", "whatever"))


def test_missing_file(tmp_path):
    with pytest.raises(ParseError, match="not found"):
        parse_case(tmp_path / "absent.m")
