import os
from dotenv import load_dotenv

load_dotenv()


def _env_float(name, default):
    value = os.getenv(name)
    return float(value) if value not in (None, '') else default


def _env_int(name, default):
    value = os.getenv(name)
    return int(value) if value not in (None, '') else default


def _env_bool(name, default):
    value = os.getenv(name)
    if value in (None, ''):
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    # Solver Configuration
    BACKEND = os.getenv('CAES_BACKEND', 'highs')  # highs | cbc
    MIP_GAP = _env_float('CAES_MIP_GAP', 1e-4)
    TIME_LIMIT = _env_float('CAES_TIME_LIMIT', 600.0)  # seconds per solve
    THREADS = _env_int('CAES_THREADS', 1)

    # Network Linearization Configuration
    LOSS_BLOCKS = _env_int('CAES_LOSS_BLOCKS', 2)
    POLYGON_SEGMENTS = _env_int('CAES_POLYGON_SEGMENTS', 12)
    THETA_MAX = _env_float('CAES_THETA_MAX', 0.6)  # rad
    SIGN_TOLERANCE = _env_float('CAES_SIGN_TOLERANCE', 1e-4)  # rad
    THETA_MAX_MARGIN = _env_float('CAES_THETA_MAX_MARGIN', 1.25)
    THETA_MAX_FLOOR = _env_float('CAES_THETA_MAX_FLOOR', 0.05)  # rad
    FIX_SCENARIO_SIGNS = _env_bool('CAES_FIX_SCENARIO_SIGNS', True)

    # Storage Configuration
    BIG_M_MARGIN = _env_float('CAES_BIG_M_MARGIN', 1.1)
    GM_ETA_CH = _env_float('CAES_GM_ETA_CH', 1.0)
    GM_ETA_DIS = _env_float('CAES_GM_ETA_DIS', 1.0)
    TERMINAL_AIR_FRACTION = (
        _env_float('CAES_TERMINAL_AIR_FRACTION', 0.0) or None
    )  # unset -> no terminal constraint

    # Audit Configuration
    RESIDUAL_TOLERANCE = _env_float('CAES_RESIDUAL_TOLERANCE', 1e-6)
    RECONCILE_TOLERANCE = _env_float('CAES_RECONCILE_TOLERANCE', 1e-5)
    SCENARIO_PROBABILITY_TOLERANCE = 0.005

    # Study Configuration
    OUTPUT_FOLDER = os.getenv('CAES_OUTPUT_FOLDER', 'reports')
    STUDY_PARALLELISM = _env_int('CAES_STUDY_PARALLELISM', 1)
    DEFAULT_SEED = _env_int('CAES_SEED', 7)
    REPORT_SCHEMA_VERSION = '1.0'

    # Logging Configuration
    LOG_LEVEL = os.getenv('CAES_LOG_LEVEL', 'INFO')

    @staticmethod
    def ensure_dirs(output_folder=None):
        # Create necessary directories
        os.makedirs(output_folder or Config.OUTPUT_FOLDER, exist_ok=True)
