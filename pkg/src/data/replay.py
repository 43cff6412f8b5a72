# src/data/replay.py - Replay bundles: frozen inputs shared by paired runs
"""A bundle directory holds everything an algorithm consumes besides the case:

    setup.json       scenario echo, partition, selection masks
    snapshots.json   true states, measurements, variances, bad rows per t
    schedule.jsonl   gossip header line + one ExchangeEvent per line
    hashes.json      sha256 of the three files above

Runs that load the same bundle consume identical snapshots and schedules;
the hashes make that checkable after the fact.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List

from config.config import config
from src.core.exceptions import ParseError
from src.core.measurement import AreaPartition, SelectionMask, Snapshot
from src.data.results import file_sha256, read_json, write_json
from src.network.gossip import GraphSequence
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)

SETUP_FILE = "setup.json"
SNAPSHOTS_FILE = "snapshots.json"
SCHEDULE_FILE = "schedule.jsonl"
HASHES_FILE = "hashes.json"
HASHED_FILES = (SETUP_FILE, SNAPSHOTS_FILE, SCHEDULE_FILE)


@dataclass
class ReplayBundle:
    scenario: Dict[str, Any]
    partition: AreaPartition
    masks: List[SelectionMask]
    snapshots: List[Snapshot]
    schedule: GraphSequence


def write_bundle(directory, bundle: ReplayBundle) -> Dict[str, str]:
    """Write the bundle and return the file hashes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_json(
        directory / SETUP_FILE,
        {
            "schema_version": config.schema_version,
            "scenario": bundle.scenario,
            "partition": bundle.partition.to_dict(),
            "masks": [mask.to_dict() for mask in bundle.masks],
        },
    )
    write_json(
        directory / SNAPSHOTS_FILE,
        {
            "schema_version": config.schema_version,
            "snapshots": [snapshot.to_dict() for snapshot in bundle.snapshots],
        },
    )
    bundle.schedule.dump_jsonl(str(directory / SCHEDULE_FILE))
    hashes = bundle_hashes(directory)
    write_json(directory / HASHES_FILE, hashes)
    logger.info(
        f"Wrote replay bundle to {directory}: {len(bundle.snapshots)} snapshots, "
        f"{sum(1 for _ in bundle.schedule.events())} exchange events"
    )
    return hashes


def bundle_hashes(directory) -> Dict[str, str]:
    directory = Path(directory)
    return {name: file_sha256(directory / name) for name in HASHED_FILES}


def load_bundle(directory, verify: bool = True) -> ReplayBundle:
    """Load a bundle written by write_bundle.

    Raises:
        ParseError: a file is missing, or a hash does not match (verify=True).
    """
    directory = Path(directory)
    for name in HASHED_FILES:
        if not (directory / name).is_file():
            raise ParseError(f"replay bundle is missing {name}", str(directory))
    if verify and (directory / HASHES_FILE).is_file():
        expected = read_json(directory / HASHES_FILE)
        actual = bundle_hashes(directory)
        changed = [name for name in HASHED_FILES if expected.get(name) != actual[name]]
        if changed:
            raise ParseError(f"replay files changed since they were written: {changed}", str(directory))

    setup = read_json(directory / SETUP_FILE)
    masks = [SelectionMask.from_dict(m) for m in setup["masks"]]
    snapshot_data = read_json(directory / SNAPSHOTS_FILE)
    snapshots = [Snapshot.from_dict(s, masks) for s in snapshot_data["snapshots"]]
    schedule = GraphSequence.load_jsonl(str(directory / SCHEDULE_FILE))
    logger.info(f"Loaded replay bundle from {directory}")
    return ReplayBundle(
        scenario=setup["scenario"],
        partition=AreaPartition.from_dict(setup["partition"]),
        masks=masks,
        snapshots=snapshots,
        schedule=schedule,
    )
