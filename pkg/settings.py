"""
Environment configuration, logging setup and worker pool sizing.
"""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

# Load variables from a .env file if one exists (FCC_OUTPUT_DIR, FCC_LOG_LEVEL, FCC_MNIST_DIR)
load_dotenv()

OUTPUT_DIR_ENV = "FCC_OUTPUT_DIR"
LOG_LEVEL_ENV = "FCC_LOG_LEVEL"
MNIST_DIR_ENV = "FCC_MNIST_DIR"

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"


def resolve_output_dir(flag_value: Optional[str], default: str = "runs") -> Path:
    """Output directory: the environment override wins over flags and config."""
    env_value = os.environ.get(OUTPUT_DIR_ENV)
    chosen = env_value or flag_value or default
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def default_mnist_dir() -> Optional[str]:
    return os.environ.get(MNIST_DIR_ENV) or None


def worker_count(threads: Optional[int] = None) -> int:
    """Number of workers for parallel certification/attack/separability paths."""
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return threads


def setup_logger(log_dir: Optional[Path] = None) -> logging.Logger:
    """Configure the root logger with a console handler and, optionally, run.log."""
    logger = logging.getLogger()
    level_name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    logger.setLevel(getattr(logging, level_name, logging.INFO))

    for handler in list(logger.handlers):
        if getattr(handler, "_fcc_handler", False):
            logger.removeHandler(handler)
            handler.close()

    fmt = logging.Formatter(LOG_FORMAT)

    sh = logging.StreamHandler()
    sh.setFormatter(fmt)
    sh._fcc_handler = True
    logger.addHandler(sh)

    if log_dir is not None:
        fh = logging.FileHandler(Path(log_dir) / "run.log", encoding="utf-8")
        fh.setFormatter(fmt)
        fh._fcc_handler = True
        logger.addHandler(fh)

    return logger
