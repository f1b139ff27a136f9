# Lower Snell Toolkit - Configuration
# ============================================================================

import os
from pathlib import Path

# Base directory
BASE_DIR = Path(__file__).parent.absolute()

# Shipped models and run logs
FIXTURES_DIR = BASE_DIR / "fixtures"
LOGS_DIR = BASE_DIR / "logs"

TOOL_VERSION = "1.0.0"

# Exit codes of the command-line surface
EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_BUDGET = 4


DEFAULT_BUDGET = 10**6


def env_budget(default: int = DEFAULT_BUDGET) -> int:
    """Enumeration budget from SNELL_BUDGET, falling back to the default.

    Read at call time, never at import.
    """
    raw = os.environ.get('SNELL_BUDGET')
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"SNELL_BUDGET must be an integer, got {raw!r}")
    if value < 1:
        raise ValueError(f"SNELL_BUDGET must be positive, got {value}")
    return value


def default_budget() -> int:
    """Budget used when no --budget flag is given."""
    return env_budget(Config.ENUMERATION_BUDGET)


class Config:
    # Enumeration (SNELL_BUDGET overrides at call time, --budget overrides both)
    ENUMERATION_BUDGET = DEFAULT_BUDGET
    WORKERS = int(os.environ.get('SNELL_WORKERS', 1))

    # Numerics
    EXACT_ARITHMETIC = os.environ.get('SNELL_EXACT', 'False').lower() == 'true'
    TOLERANCE = 1e-9             # absolute, on payoffs normalized to max|H| <= 1e3
    KERNEL_SUM_TOLERANCE = 1e-9  # accepted |sum - 1| before exact renormalization
    PAYOFF_SCALE_LIMIT = 1e3
    GAP_THRESHOLD = 1e-6         # minimax gap that counts as a genuine gap

    # Random instances
    MIN_RANDOM_KERNEL_ENTRY = 0.05
    MAX_RANDOM_PAYOFF = 100
    MAX_RANDOM_DEPTH = 4
    MAX_RANDOM_BRANCHING = 3
    MAX_RANDOM_KERNELS = 3

    # Invariant suite sizes
    RANDOM_DRAWS = 100           # tower and restriction identities
    RANDOM_CHAINS = 50           # backward submartingale chains
    PERTURBATIONS = 25           # Snell minimality perturbations
    STABILITY_MEMBER_CAP = 64
    TSYSTEM_STOPPING_TIME_CAP = 10**4
    EXHAUSTIVE_MINIMALITY_NODES = 7
    EVENT_SUBSET_LEAF_CAP = 10   # all events below this many leaves, atoms above

    LOG_LEVEL = os.environ.get('SNELL_LOG_LEVEL', 'INFO').upper()


# Logging configuration
LOGGING_CONFIG = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'default': {
            'format': '[%(asctime)s] %(levelname)s in %(module)s: %(message)s',
        }
    },
    'handlers': {
        'file': {
            'level': 'DEBUG',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': LOGS_DIR / 'lower_snell.log',
            'maxBytes': 10485760,  # 10MB
            'backupCount': 5,
            'formatter': 'default'
        },
        'console': {
            'level': 'WARNING',
            'class': 'logging.StreamHandler',
            'formatter': 'default'
        }
    },
    'root': {
        'level': Config.LOG_LEVEL,
        'handlers': ['file', 'console']
    }
}

# Payoff functions accepted by the binomial generator
PAYOFF_TYPES = ('put', 'call', 'custom')
