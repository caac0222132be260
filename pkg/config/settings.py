"""
Configuration module for the OAM link simulator
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Project root directory
PROJECT_ROOT = Path(__file__).parent.parent.absolute()

# Application settings
APP_NAME = os.getenv("APP_NAME", "OAM Link Simulator")
APP_VERSION = os.getenv("APP_VERSION", "1.0.0")
DEBUG = os.getenv("DEBUG", "False").lower() == "true"

# Optics defaults (close to the experimental link: 1064 nm, 7.35 cm waist, 3 km)
WAVELENGTH = float(os.getenv("OAM_WAVELENGTH", "1064e-9"))
BEAM_WAIST = float(os.getenv("OAM_BEAM_WAIST", "0.0735"))
PATH_LENGTH = float(os.getenv("OAM_PATH_LENGTH", "3000"))
PROPAGATION_T = float(os.getenv("OAM_T", "0.19"))

# Discretization
GRID_N = int(os.getenv("OAM_GRID_N", "512"))
GRID_EXTENT_FACTOR = float(os.getenv("OAM_GRID_EXTENT_FACTOR", "4.0"))  # x aperture diameter
SPECTRAL_GUARD = os.getenv("OAM_SPECTRAL_GUARD", "True").lower() == "true"

# Turbulence channel
N_STEPS = int(os.getenv("OAM_N_STEPS", "21"))
SUBHARMONIC_LEVELS = int(os.getenv("OAM_SUBHARMONIC_LEVELS", "3"))
MAX_STEP_RYTOV = float(os.getenv("OAM_MAX_STEP_RYTOV", "0.5"))
APERTURE_FACTOR = float(os.getenv("OAM_APERTURE_FACTOR", "2.0"))

# Mode bookkeeping
MAX_AZIMUTHAL_INDEX = int(os.getenv("OAM_MAX_L", "16"))
SPECTRUM_HALF_WINDOW = int(os.getenv("OAM_SPECTRUM_HALF_WINDOW", "8"))

# Statistics
BOOTSTRAP_RESAMPLES = int(os.getenv("OAM_BOOTSTRAP_RESAMPLES", "200"))
DEFAULT_SEED = int(os.getenv("OAM_SEED", "20190101"))
DEFAULT_REALIZATIONS = int(os.getenv("OAM_REALIZATIONS", "50"))
WORKERS = int(os.getenv("OAM_WORKERS", "1"))

# Output settings
OUTPUT_FOLDER = Path(os.getenv("OUTPUT_FOLDER", str(PROJECT_ROOT / "results")))
OUTPUT_FORMATS = {"csv", "json"}

# Create folders if they don't exist
OUTPUT_FOLDER.mkdir(parents=True, exist_ok=True)

# Logging configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
