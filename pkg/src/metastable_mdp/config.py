import logging
import os
import sys
import tempfile
from typing import Optional

# Load environment variables
from dotenv import load_dotenv
load_dotenv()

SEED_ENV_VAR = "METASTABLE_MDP_SEED"
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("METASTABLE_MDP_LOG_FILE")
DEFAULT_THREADS = int(os.getenv("METASTABLE_MDP_THREADS", str(os.cpu_count() or 1)))
STEP_BUDGET = int(float(os.getenv("METASTABLE_MDP_STEP_BUDGET", "1e9")))
LOCK_DIR = os.getenv("METASTABLE_MDP_LOCK_DIR", tempfile.gettempdir())

CSV_HEADER = "# metastable-mdp v1"


def configure_logging(level: Optional[str] = None):
    """Configure root logging the same way for every entry point"""
    handlers = [logging.StreamHandler(sys.stderr)]
    if LOG_FILE:
        handlers.append(logging.FileHandler(LOG_FILE))
    logging.basicConfig(
        level=level or LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


def resolve_seed(seed: int) -> int:
    """Return the seed to use; METASTABLE_MDP_SEED wins over the command line"""
    override = os.getenv(SEED_ENV_VAR)
    if override is None or override.strip() == "":
        return seed
    try:
        return int(override)
    except ValueError:
        logging.error(f"Ignoring non-integer {SEED_ENV_VAR}={override!r}")
        raise ValueError(f"{SEED_ENV_VAR} must be an integer, got {override!r}")
