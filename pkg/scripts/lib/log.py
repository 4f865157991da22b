"""Logging setup for the command-line entry points.

Library modules only call ``logging.getLogger(__name__)``. The CLI calls
configure_logging() once; output goes to stderr so stdout stays reserved for
the JSON summary.
"""

import logging
import os
import sys

# Set to any non-empty value to get DEBUG output regardless of --verbose
DEBUG_ENV_VAR = "SPINSIM_DEBUG"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def resolve_level(verbose: bool = False) -> int:
    """Pick the root log level from the --verbose flag and SPINSIM_DEBUG."""
    if os.environ.get(DEBUG_ENV_VAR):
        return logging.DEBUG
    return logging.INFO if verbose else logging.WARNING


def configure_logging(verbose: bool = False) -> logging.Logger:
    """Attach a single stderr handler to the ``lib`` logger hierarchy.

    Safe to call repeatedly (tests invoke main() many times); existing
    handlers installed by a previous call are replaced.
    """
    logger = logging.getLogger("lib")
    for handler in list(logger.handlers):
        if getattr(handler, "_spinsim", False):
            logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._spinsim = True
    logger.addHandler(handler)
    logger.setLevel(resolve_level(verbose))
    logger.propagate = False
    return logger
