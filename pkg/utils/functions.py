import os
import sys

import psutil
import torch
from loguru import logger

from .constants import APPLICATION_NAME, LOG_ENV_VAR

# Loggers of the package, disabled together when logging is switched off
PACKAGE_LOGGERS = ["main", "modules", "services", "shared", "utils"]


# Merge the parsed data with the default configuration, one level of sections deep
def merge_defaults(data: dict, defaults: dict) -> dict:
    merged = {**defaults}
    for key, value in data.items():
        default_value = defaults.get(key)
        if isinstance(value, dict) and isinstance(default_value, dict):
            merged[key] = merge_defaults(value, default_value)
        else:
            merged[key] = value
    return merged


def ensure_directory(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def configure_logging(level: str | None = None) -> None:
    """Route loguru to stderr at the level named by MICROELAST_LOG."""
    level = (level or os.environ.get(LOG_ENV_VAR, "INFO")).upper()
    logger.remove()

    if level == "OFF":
        for name in PACKAGE_LOGGERS:
            logger.disable(name)
        return

    for name in PACKAGE_LOGGERS:
        logger.enable(name)
    logger.add(
        sys.stderr,
        level=level,
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {message}",
    )


def configure_threads(threads: int | None) -> int:
    """Set torch intra-op threads, defaulting to the physical core count."""
    if threads is None:
        threads = psutil.cpu_count(logical=False) or 1
    if threads < 1:
        raise ValueError(f"threads must be positive, got {threads}")
    torch.set_num_threads(threads)
    logger.info(f"[{APPLICATION_NAME}] Using {threads} torch threads")
    return threads


def dense_matrix_fits(n: int, copies: int = 1) -> bool:
    """Whether `copies` dense n x n float64 matrices fit into available memory."""
    required = copies * n * n * 8
    return required < psutil.virtual_memory().available
