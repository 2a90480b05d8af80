"""
settings.py - Default configuration for traffic_recon

Every UPPERCASE name in this module is a default that can be replaced by a
settings file passed with ``--settings`` (see recon_settings_example.py at the
repository root). Environment variables:

    RECON_LOG         log verbosity: error, info or debug (default info)
    RECON_OUTPUT_DIR  directory for log files (default ./output)
"""

import importlib.util
import logging
import os
import sys

from .errors import ValidationError

logger = logging.getLogger(__name__)

# --- Model defaults ---
EPSILON = 1e-4

# --- Solver defaults ---
SOLVER_TOLERANCE = 1e-8
SOLVER_SCHEME = "gauss_seidel"

# --- Learning defaults ---
LEARN_LAMBDA = 0.0
LEARN_STEP_SIZE = 1.0
LEARN_MAX_STEPS = 500
LEARN_GRAD_TOLERANCE = 1e-6
MAX_LOG_ETA = 40.0

# --- Evaluation defaults ---
DEFAULT_TRIALS = 500
DEFAULT_P_VALUES = (0.5, 0.7, 0.9)
DEFAULT_LAMBDA_VALUES = (0.0,)

# --- Map colors ---
BIN_WIDTH = 0.05
PALETTE = ("black", "blue", "green", "yellow", "red")

# --- Paths and logging ---
LOG_LEVEL_ENV = "RECON_LOG"
OUTPUT_DIR = os.environ.get("RECON_OUTPUT_DIR") or os.path.join(os.getcwd(), "output")
LOG_FILE_NAME = None

LOG_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def log_level_from_env():
    """Map the RECON_LOG environment variable to a logging level."""
    raw = os.environ.get(LOG_LEVEL_ENV, "info").strip().lower()
    if raw not in LOG_LEVELS:
        logger.warning(f"Unknown {LOG_LEVEL_ENV} value '{raw}', using info")
        return logging.INFO
    return LOG_LEVELS[raw]


def load_config(filepath):
    """Loads a settings module from a Python file.

    Args:
        filepath: Path to a .py file defining UPPERCASE settings

    Returns:
        The loaded module object
    """
    if not os.path.exists(filepath):
        raise ValidationError(f"Settings file not found at {filepath}")

    spec = importlib.util.spec_from_file_location("recon_settings_override", filepath)
    if spec is None or spec.loader is None:
        raise ValidationError(f"Could not load settings from {filepath}")

    config_module = importlib.util.module_from_spec(spec)
    sys.modules["recon_settings_override"] = config_module
    try:
        spec.loader.exec_module(config_module)
    except Exception as e:
        raise ValidationError(f"Error loading settings from {filepath}: {e}") from e
    finally:
        sys.modules.pop("recon_settings_override", None)
    return config_module


def apply_overrides(filepath):
    """Replace defaults in this module with the UPPERCASE names of a settings file.

    Returns:
        List of setting names that were overridden
    """
    config_module = load_config(filepath)
    this_module = sys.modules[__name__]
    applied = []
    for name in dir(config_module):
        if not name.isupper():
            continue
        if not hasattr(this_module, name):
            logger.warning(f"Ignoring unknown setting {name} in {filepath}")
            continue
        setattr(this_module, name, getattr(config_module, name))
        applied.append(name)
    logger.debug(f"Applied settings overrides: {applied}")
    return applied
