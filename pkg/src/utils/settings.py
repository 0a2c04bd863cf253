"""Process-level settings read from the environment (.env supported)."""

import logging
import os
from typing import Optional

from dotenv import load_dotenv

# Project root (two levels up from src/utils/)
UTILS_DIR = os.path.dirname(os.path.abspath(__file__))
SRC_DIR = os.path.dirname(UTILS_DIR)
PROJECT_ROOT = os.path.dirname(SRC_DIR)

DEFAULT_OUTPUT_ROOT = os.path.join(PROJECT_ROOT, "output")
DEFAULT_DB_PATH = os.path.join(PROJECT_ROOT, "database", "afc_runs.db")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

load_dotenv()


def output_root() -> str:
    """Artifact root directory (AFC_OUTPUT_ROOT)."""
    return os.getenv("AFC_OUTPUT_ROOT") or DEFAULT_OUTPUT_ROOT


def db_path() -> str:
    """Run ledger path (AFC_DB_PATH)."""
    return os.getenv("AFC_DB_PATH") or DEFAULT_DB_PATH


def default_threads() -> int:
    """Sweep worker count (AFC_THREADS), at least 1."""
    value = os.getenv("AFC_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        logging.getLogger(__name__).warning("ignoring non-integer AFC_THREADS=%r", value)
        return 1


def setup_logging(level: Optional[str] = None) -> None:
    """Configure root logging once; level from the argument or AFC_LOG_LEVEL."""
    name = (level or os.getenv("AFC_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT)
