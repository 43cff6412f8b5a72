import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the sys.path so that the 'src' package is importable
project_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(project_root))

from src.core.grid_model import GridModel  # noqa: E402


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="run IEEE-118 reproduction tests",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: IEEE-118 scale runs (use --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def build_random_grid(
    N, seed=0, extra=2, convention="paper", shunts=True, zero=False
) -> GridModel:
    """Random connected grid: random spanning tree plus a few extra lines."""
    rng = np.random.default_rng(seed)
    pairs = []
    for n in range(1, N):
        pairs.append((int(rng.integers(n)), n))
    candidates = [
        (a, b)
        for a in range(N)
        for b in range(a + 1, N)
        if (a, b) not in pairs and (b, a) not in pairs
    ]
    rng.shuffle(candidates)
    pairs.extend(candidates[:extra])
    edges = []
    for a, b in pairs:
        if zero:
            y, ybar = 0j, 0j
        else:
            y = complex(rng.uniform(0.5, 5.0), -rng.uniform(1.0, 20.0))
            ybar = complex(0.0, rng.uniform(0.0, 0.1)) if shunts else 0j
        # random orientation so from_bus > to_bus also gets exercised
        if rng.random() < 0.5:
            a, b = b, a
        edges.append((a, b, y, ybar))
    return GridModel.from_edges(N, edges, convention=convention, name=f"random{N}")


@pytest.fixture
def make_grid():
    return build_random_grid


@pytest.fixture
def two_bus_grid():
    """2-bus grid with Y_12 = 1 - 2i and no shunt."""
    return GridModel.from_edges(2, [(0, 1, 1 - 2j, 0j)], convention="paper")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ieee14_case():
    from src.data.case_parser import parse_case

    return parse_case("ieee14")


@pytest.fixture(scope="session")
def ieee14_grid(ieee14_case):
    return ieee14_case.to_grid()
