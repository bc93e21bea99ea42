"""
Runtime settings loaded from the environment (.env supported) and logging setup.
"""
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Iterator, Optional

from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)


def int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"⚠️ {name}={raw!r} is not an integer, using {default}")
        return default


SELDYN_THREADS = max(1, int_env("SELDYN_THREADS", 1))
SELDYN_LOG_LEVEL = os.getenv("SELDYN_LOG_LEVEL", "INFO").upper()

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

_thread_override: Optional[int] = None


def configure_logging(verbose: bool = False) -> None:
    """Send package logs to stderr; --verbose forces DEBUG."""
    level = logging.DEBUG if verbose else getattr(logging, SELDYN_LOG_LEVEL, logging.INFO)
    root = logging.getLogger("seldyn")
    root.setLevel(level)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)


def set_thread_cap(threads: Optional[int]) -> None:
    global _thread_override
    _thread_override = None if threads is None else max(1, int(threads))


def thread_cap() -> int:
    return _thread_override if _thread_override is not None else SELDYN_THREADS


@contextmanager
def worker_pool() -> Iterator[Optional[ThreadPoolExecutor]]:
    """
    Yield an executor capped by SELDYN_THREADS, or None when running serially.
    Callers must merge results in submission order.
    """
    workers = thread_cap()
    if workers <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield pool
