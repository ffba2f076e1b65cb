"""Configuration module for process-level settings and solver defaults."""
import os
from dotenv import load_dotenv

load_dotenv()


class ConfigurationError(ValueError):
    """Raised for invalid, missing or contradictory configuration values."""


class Config:
    """Application configuration."""

    # Output and logging
    OUTPUT_DIR = os.getenv('PHASEFLOW_OUTPUT_DIR', 'output')
    LOG_LEVEL = os.getenv('PHASEFLOW_LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('PHASEFLOW_LOG_FILE', 'phaseflow.log')

    # Threads used for face-flux evaluation (1 = sequential)
    ASSEMBLY_WORKERS = int(os.getenv('PHASEFLOW_ASSEMBLY_WORKERS', 1))

    # Full-size acceptance runs in the test suite
    SLOW_TESTS = os.getenv('PHASEFLOW_SLOW_TESTS', '0') not in ('0', '', 'false', 'False')

    # Newton-Raphson defaults
    NEWTON_TOL = 1e-9
    NEWTON_MAX_ITER = 50
    NEWTON_DAMPING = 1.0
    NEWTON_BACKTRACK_RATIO = 0.5
    NEWTON_MAX_BACKTRACKS = 30
    NEWTON_EXCURSION = 0.1  # iterates with c1 outside [-0.1, 1.1] are backtracked
    BOUND_SLACK = 1e-12  # round-off excursion projected back after convergence
    LOG_EPSILON = 1e-12
    # splu column ordering (permc_spec)
    LU_ORDERING = os.getenv('PHASEFLOW_LU_ORDERING', 'MMD_AT_PLUS_A')

    # Time-step adaptation
    DT_SHRINK = 0.5
    DT_GROW = 1.5
    DT_MIN_FACTOR = 2.0 ** -20

    # Minimizing-movement (1D) defaults
    JKO_TOL = 1e-7
    JKO_MAX_ITER = 10000
    PROJECTION_TOL = 1e-12

    # Mesh admissibility
    CARTESIAN_ANGLE_TOL = 1e-8
    IMPORT_ANGLE_TOL = 1e-6

    # Spinodal statistic thresholds
    MIXED_LOW = 0.1
    MIXED_HIGH = 0.9

config = Config()
