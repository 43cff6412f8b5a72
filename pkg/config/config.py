# config/config.py
import os
from dotenv import load_dotenv
from src.__version__ import VERSION, SCHEMA_VERSION
from src.utils.logging_utils import get_logger

# Load .env file
load_dotenv()

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Environment variables
LOG_LEVEL = os.getenv("DARSE_LOG_LEVEL", "INFO").upper()
LOG_DIR = os.getenv("DARSE_LOG_DIR", os.path.join(PROJECT_ROOT, "logs"))
RESULTS_DIR = os.getenv("DARSE_RESULTS_DIR", "results")
ADMITTANCE_CONVENTION = os.getenv("DARSE_ADMITTANCE_CONVENTION", "paper").lower()
DEFAULT_SEED = int(os.getenv("DARSE_DEFAULT_SEED", "0"))

# Validate environment variables
if ADMITTANCE_CONVENTION not in ("paper", "standard"):
    raise ValueError(
        "DARSE_ADMITTANCE_CONVENTION must be 'paper' or 'standard', "
        f"got {ADMITTANCE_CONVENTION!r}"
    )

# Experiment defaults (IEEE-118 reproduction)
BASE_SIGMA = 1e-3
AREA_COUNT = 10
MEASUREMENT_FRACTION = 0.5
PMU_AREAS = (0, 1, 2)
BAD_COUNT = 25
BAD_VARIANCE_FACTOR = 100.0
LINK_FAILURE_P = 0.1
SYNC_ALPHA = 0.03
GOSSIP_BETA = 0.5
EXCHANGES_PER_UPDATE = 10
UPDATES_PER_SNAPSHOT = 20
DIFFUSION_STEP_SIZES = (0.01, 0.3, 0.5, 1.0)
DIFFUSION_ROUNDS = 200

# Solver defaults
V_MAX = 2.0
STEP_TOL = 1e-8
COVARIANCE_FLOOR = 1e-8
RIDGE_SCALE = 1e-10
EXCHANGE_CAP = 1e9
BASIN_CAP = 1e12
TRAJECTORY_AMPLITUDE = 0.01

BUILTIN_CASES = {
    "ieee14": "case14",
    "case14": "case14",
    "ieee118": "case118",
    "case118": "case118",
}


class SimulatorConfig:
    def __init__(self):
        self.app_version = VERSION
        self.schema_version = SCHEMA_VERSION
        self.project_root = PROJECT_ROOT
        self.log_level = LOG_LEVEL
        self.log_dir = LOG_DIR
        self.results_dir = RESULTS_DIR
        self.admittance_convention = ADMITTANCE_CONVENTION
        self.default_seed = DEFAULT_SEED
        self.base_sigma = BASE_SIGMA
        self.area_count = AREA_COUNT
        self.measurement_fraction = MEASUREMENT_FRACTION
        self.pmu_areas = list(PMU_AREAS)
        self.bad_count = BAD_COUNT
        self.bad_variance_factor = BAD_VARIANCE_FACTOR
        self.link_failure_p = LINK_FAILURE_P
        self.sync_alpha = SYNC_ALPHA
        self.gossip_beta = GOSSIP_BETA
        self.exchanges_per_update = EXCHANGES_PER_UPDATE
        self.updates_per_snapshot = UPDATES_PER_SNAPSHOT
        self.diffusion_step_sizes = list(DIFFUSION_STEP_SIZES)
        self.diffusion_rounds = DIFFUSION_ROUNDS
        self.v_max = V_MAX
        self.step_tol = STEP_TOL
        self.covariance_floor = COVARIANCE_FLOOR
        self.ridge_scale = RIDGE_SCALE
        self.exchange_cap = EXCHANGE_CAP
        self.basin_cap = BASIN_CAP
        self.trajectory_amplitude = TRAJECTORY_AMPLITUDE
        self.builtin_cases = dict(BUILTIN_CASES)


config = SimulatorConfig()

# Test log to confirm setup
logger = get_logger(__name__)
logger.debug("Logging initialized!")
