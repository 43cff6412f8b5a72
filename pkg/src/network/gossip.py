# src/network/gossip.py - Simulated gossip exchanges over time-varying graphs
"""Pairwise gossip (URE), synchronous Laplacian mixing and exact averaging.

Wall-clock gossip instants are abstracted to indices: snapshot ``t``, update
``k`` (``k = 0`` is reserved for the initialization exchanges) and exchange
``ell = 1..ell_k`` inside the update.
"""
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from src.core.exceptions import DimensionMismatchError
from src.estimation.information import network_mean
from src.utils.logging_utils import get_logger
from src.utils.rng import RandomStreams, StreamPurpose

logger = get_logger(__name__)


@dataclass
class GossipConfig:
    agent_count: int
    beta: float = 0.5
    overlay: Optional[nx.Graph] = None
    partner_probabilities: Optional[Dict[int, Dict[int, float]]] = None
    link_failure_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.agent_count < 1:
            raise ValueError(f"agent_count must be >= 1, got {self.agent_count}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0 <= self.link_failure_p < 1:
            raise ValueError(f"link_failure_p must lie in [0, 1), got {self.link_failure_p}")
        if self.overlay is None:
            self.overlay = nx.complete_graph(self.agent_count)
        if set(self.overlay.nodes) != set(range(self.agent_count)):
            raise ValueError("overlay nodes must be 0..agent_count-1")
        if self.agent_count > 1:
            isolated = [i for i in range(self.agent_count) if self.overlay.degree(i) == 0]
            if isolated:
                raise ValueError(f"agents {isolated} have no overlay neighbors")
            if not nx.is_connected(self.overlay):
                logger.warning("Gossip overlay is disconnected")
        self._partners = {}
        for i in range(self.agent_count):
            neighbors = np.array(sorted(self.overlay.neighbors(i)), dtype=np.int64)
            if self.partner_probabilities is None:
                probs = np.full(neighbors.size, 1.0 / max(neighbors.size, 1))
            else:
                row = self.partner_probabilities.get(i, {})
                if set(row) - set(neighbors.tolist()):
                    raise ValueError(f"agent {i}: partner probabilities outside its neighbors")
                probs = np.array([row.get(int(j), 0.0) for j in neighbors])
                if neighbors.size and not np.isclose(probs.sum(), 1.0):
                    raise ValueError(f"agent {i}: partner probabilities sum to {probs.sum()}")
            self._partners[i] = (neighbors, probs)

    def partners(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        return self._partners[i]

    def adjacency(self) -> np.ndarray:
        return nx.to_numpy_array(self.overlay, nodelist=range(self.agent_count))


@dataclass(frozen=True)
class ExchangeEvent:
    t: int
    k: int
    ell: int
    waking: int
    partner: int
    failed: bool = False

    def __post_init__(self):
        if self.waking == self.partner:
            raise ValueError(f"exchange at ell={self.ell} pairs agent {self.waking} with itself")

    @property
    def pair(self) -> Tuple[int, int]:
        return tuple(sorted((self.waking, self.partner)))

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ExchangeEvent":
        return cls(
            t=int(data["t"]),
            k=int(data["k"]),
            ell=int(data["ell"]),
            waking=int(data["waking"]),
            partner=int(data["partner"]),
            failed=bool(data.get("failed", False)),
        )


@dataclass
class GraphSequence:
    """Exchange events per (t, k) slot, in exchange order."""

    agent_count: int
    slots: Dict[Tuple[int, int], List[ExchangeEvent]] = field(default_factory=dict)

    def add(self, t: int, k: int, events: Sequence[ExchangeEvent]):
        self.slots[(t, k)] = list(events)

    def slice(self, t: int, k: int) -> List[ExchangeEvent]:
        return self.slots.get((t, k), [])

    def __contains__(self, key) -> bool:
        return key in self.slots

    def events(self) -> Iterable[ExchangeEvent]:
        for key in sorted(self.slots):
            yield from self.slots[key]

    def adjacency(self, t: int, k: int, ell: int) -> np.ndarray:
        """A_k(ell): the single link active at exchange ell (empty if failed)."""
        A = np.zeros((self.agent_count, self.agent_count))
        event = self.slice(t, k)[ell - 1]
        if not event.failed:
            A[event.waking, event.partner] = A[event.partner, event.waking] = 1.0
        return A

    def weight_matrix(self, t: int, k: int, ell: int, beta: float) -> np.ndarray:
        event = self.slice(t, k)[ell - 1]
        if event.failed:
            return np.eye(self.agent_count)
        return pairwise_weight_matrix(self.agent_count, event.waking, event.partner, beta)

    def dump_jsonl(self, path: str):
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as handle:
            handle.write(json.dumps({"agent_count": self.agent_count}) + "\n")
            for event in self.events():
                handle.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
        os.replace(tmp, path)

    @classmethod
    def load_jsonl(cls, path: str) -> "GraphSequence":
        with open(path, "r", encoding="utf-8") as handle:
            header = json.loads(handle.readline())
            sequence = cls(int(header["agent_count"]))
            for line in handle:
                if line.strip():
                    event = ExchangeEvent.from_dict(json.loads(line))
                    sequence.slots.setdefault((event.t, event.k), []).append(event)
        for events in sequence.slots.values():
            events.sort(key=lambda e: e.ell)
        return sequence


def pairwise_weight_matrix(I: int, i: int, j: int, beta: float) -> np.ndarray:
    """W = I - beta (e_i - e_j)(e_i - e_j)^T."""
    if i == j:
        raise ValueError("pairwise weight matrix needs two distinct agents")
    if not (0 <= i < I and 0 <= j < I):
        raise IndexError(f"agents ({i}, {j}) outside 0..{I - 1}")
    e = np.zeros(I)
    e[i], e[j] = 1.0, -1.0
    return np.eye(I) - beta * np.outer(e, e)


def ure_round(payloads: np.ndarray, event: ExchangeEvent, beta: float) -> np.ndarray:
    """Apply one exchange: both agents move to (1 - beta) own + beta other."""
    payloads = np.asarray(payloads, dtype=float)
    if payloads.ndim != 2:
        raise DimensionMismatchError(f"payloads must be 2-D (agents x length), got {payloads.shape}")
    mixed = payloads.copy()
    if event.failed:
        return mixed
    i, j = event.waking, event.partner
    mixed[i] = (1 - beta) * payloads[i] + beta * payloads[j]
    mixed[j] = (1 - beta) * payloads[j] + beta * payloads[i]
    return mixed


def generate_schedule(
    config: GossipConfig, k: int, ell_k: int, t: int = 0
) -> List[ExchangeEvent]:
    """ell_k random exchanges for update k of snapshot t.

    Draw order per exchange from the GOSSIP stream keyed (t, k): waking agent
    (uniform), partner (by partner probabilities), failure (Bernoulli).
    """
    if ell_k < 0:
        raise ValueError(f"ell_k must be >= 0, got {ell_k}")
    if config.agent_count < 2:
        return []
    rng = RandomStreams(config.seed).generator(StreamPurpose.GOSSIP, t, k)
    events = []
    for ell in range(1, ell_k + 1):
        waking = int(rng.integers(config.agent_count))
        neighbors, probs = config.partners(waking)
        partner = int(rng.choice(neighbors, p=probs))
        failed = bool(rng.random() < config.link_failure_p)
        events.append(ExchangeEvent(t, k, ell, waking, partner, failed))
    return events


@dataclass
class WindowViolation:
    pair: Tuple[int, int]
    window_start: int


@dataclass
class Condition1Report:
    connected: bool
    violations: List[WindowViolation]
    window: int

    @property
    def first_violation(self) -> Optional[WindowViolation]:
        return self.violations[0] if self.violations else None

    @property
    def satisfied(self) -> bool:
        return self.connected and not self.violations


def _missing_window(positions: np.ndarray, ell_k: int, L: int) -> Optional[int]:
    """First window start s (1-based) with no occurrence in [s, s + L - 1]."""
    last_start = ell_k - L + 1
    if last_start < 1:
        return None
    previous = 0
    for position in list(positions) + [ell_k + 1]:
        start = previous + 1
        # window [start, start + L - 1] ends before the next occurrence
        if position - previous > L and start <= last_start:
            return start
        previous = position
    return None


def verify_condition1(
    schedule, k: int, L: int, t: int = 0, agent_count: Optional[int] = None
) -> Condition1Report:
    """Check connectivity of the update's union graph and L-window recurrence.

    ``schedule`` is a GraphSequence or a plain list of the update's events.
    """
    if L < 1:
        raise ValueError(f"window L must be >= 1, got {L}")
    if isinstance(schedule, GraphSequence):
        events = schedule.slice(t, k)
        agent_count = schedule.agent_count
    else:
        events = [e for e in schedule if e.k == k and e.t == t]
        if agent_count is None:
            agent_count = 1 + max((max(e.waking, e.partner) for e in events), default=0)
    ell_k = len(events)
    union = nx.Graph()
    union.add_nodes_from(range(agent_count))
    occurrences: Dict[Tuple[int, int], List[int]] = {}
    for position, event in enumerate(events, start=1):
        if event.failed:
            continue
        union.add_edge(*event.pair)
        occurrences.setdefault(event.pair, []).append(position)
    connected = agent_count == 1 or nx.is_connected(union)

    violations = []
    for pair in sorted(occurrences):
        start = _missing_window(np.array(occurrences[pair]), ell_k, L)
        if start is not None:
            violations.append(WindowViolation(pair, start))
    violations.sort(key=lambda v: (v.window_start, v.pair))
    if violations:
        logger.debug(
            f"Window check failed for {len(violations)} pairs, "
            f"first at ell={violations[0].window_start}"
        )
    return Condition1Report(connected, violations, L)


def smallest_window(schedule, k: int, t: int = 0, agent_count: Optional[int] = None) -> Optional[int]:
    """Smallest L for which the update passes verify_condition1, if any."""
    events = schedule.slice(t, k) if isinstance(schedule, GraphSequence) else list(schedule)
    for L in range(1, len(events) + 1):
        if verify_condition1(schedule, k, L, t=t, agent_count=agent_count).satisfied:
            return L
    return None


def synchronous_weight_matrix(A, alpha: float) -> np.ndarray:
    """W = I - w L with L = diag(A 1) - A and w = alpha / max(A 1)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"adjacency must be square, got {A.shape}")
    if not np.array_equal(A, A.T) or np.any(np.diag(A) != 0) or not np.isin(A, (0.0, 1.0)).all():
        raise ValueError("adjacency must be symmetric 0/1 with zero diagonal")
    I = A.shape[0]
    if I > 1 and not nx.is_connected(nx.from_numpy_array(A)):
        logger.warning("Synchronous exchange graph is disconnected")
    degree = A.sum(axis=1)
    top = degree.max() if I else 0.0
    w = alpha / top if top > 0 else 0.0
    laplacian = np.diag(degree) - A
    return np.eye(I) - w * laplacian


class UreMixer:
    """Random pairwise gossip; events come from (or are recorded into) a schedule."""

    name = "ure"

    def __init__(self, config: GossipConfig, schedule: Optional[GraphSequence] = None):
        self.config = config
        self.schedule = schedule or GraphSequence(config.agent_count)

    def events_for(self, t: int, k: int, rounds: int) -> List[ExchangeEvent]:
        if (t, k) in self.schedule:
            events = self.schedule.slice(t, k)
            expected = rounds if self.config.agent_count > 1 else 0
            if len(events) != expected:
                raise ValueError(
                    f"replayed schedule has {len(events)} exchanges at (t={t}, k={k}), "
                    f"expected {rounds}"
                )
            return events
        events = generate_schedule(self.config, k, rounds, t=t)
        self.schedule.add(t, k, events)
        return events

    def mix(self, payloads: np.ndarray, t: int, k: int, rounds: int) -> np.ndarray:
        mixed = np.array(payloads, dtype=float)
        for event in self.events_for(t, k, rounds):
            _ure_inplace(mixed, event, self.config.beta)
        return mixed


def _ure_inplace(payloads: np.ndarray, event: ExchangeEvent, beta: float):
    if event.failed:
        return
    i, j = event.waking, event.partner
    row_i = payloads[i].copy()
    payloads[i] = (1 - beta) * row_i + beta * payloads[j]
    payloads[j] = (1 - beta) * payloads[j] + beta * row_i


class SynchronousMixer:
    """Deterministic rounds P <- W P with a fixed doubly stochastic W."""

    name = "synchronous"

    def __init__(self, W: np.ndarray):
        self.W = np.asarray(W, dtype=float)

    def mix(self, payloads: np.ndarray, t: int, k: int, rounds: int) -> np.ndarray:
        mixed = np.asarray(payloads, dtype=float)
        for _ in range(rounds):
            mixed = self.W @ mixed
        return mixed


class ExactMixer:
    """Replaces gossip by the true network mean at every agent."""

    name = "exact"

    def mix(self, payloads: np.ndarray, t: int, k: int, rounds: int) -> np.ndarray:
        payloads = np.asarray(payloads, dtype=float)
        mean = network_mean(payloads)
        return np.tile(mean, (payloads.shape[0], 1))
