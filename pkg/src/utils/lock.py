# src/utils/lock.py - Exclusive run lock on an output directory
import fcntl
import os
from contextlib import contextmanager
from pathlib import Path

from src.core.exceptions import RunLockError
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)

LOCK_NAME = ".darse.lock"


@contextmanager
def run_lock(directory):
    """
    Hold an exclusive, non-blocking file lock on ``directory`` for one run.

    Args:
        directory: Output directory; created if missing.

    Yields:
        Path: The lock file path.

    Raises:
        RunLockError: Another run already writes into this directory.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock_path = directory / LOCK_NAME
    lock_file = open(lock_path, "w")
    try:
        fcntl.flock(lock_file, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except OSError:
        lock_file.close()
        logger.error(f"Another run is already writing into {directory}")
        raise RunLockError(f"output directory {directory} is locked by another run ({lock_path})")
    logger.info(f"Acquired exclusive lock on {lock_path}")
    try:
        lock_file.write(str(os.getpid()))
        lock_file.flush()
        yield lock_path
    finally:
        fcntl.flock(lock_file, fcntl.LOCK_UN)
        lock_file.close()
