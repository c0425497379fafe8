import os
from pathlib import Path
from typing import Dict

from dotenv import load_dotenv

from radsmith.models.schemas import SplitProfile

# Load environment variables from .env file
load_dotenv()

# Base directory
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# Project settings
PROJECT_NAME = "Rad Smith - Radiograph Super-Resolution"
DEBUG = os.getenv("RADSMITH_DEBUG", "False").lower() in ("true", "1", "t")
LOG_LEVEL = "DEBUG" if DEBUG else os.getenv("RADSMITH_LOG_LEVEL", "INFO").upper()

# Storage settings
DATA_DIR = Path(os.getenv("RADSMITH_DATA_DIR", str(BASE_DIR / "data")))
RUNS_DIR = Path(os.getenv("RADSMITH_RUNS_DIR", str(BASE_DIR / "runs")))

# Compute settings
WORKERS = max(1, int(os.getenv("RADSMITH_WORKERS", "1")))
DTYPE = os.getenv("RADSMITH_DTYPE", "float64")
if DTYPE not in ("float64", "float32"):
    raise ValueError(f"RADSMITH_DTYPE must be float64 or float32, got {DTYPE}")

DEFAULT_SEED = int(os.getenv("RADSMITH_SEED", "0"))

# Degradation profiles
PROFILES: Dict[str, SplitProfile] = {
    "mura-sr": SplitProfile(name="mura-sr", kernel_size_choices=[1, 3, 5, 7, 9, 11], jpeg_quality=30),
    "mini": SplitProfile(name="mini", kernel_size_choices=[1, 3, 5], jpeg_quality=30),
    "plus": SplitProfile(name="plus", kernel_size_choices=[7, 9, 11], jpeg_quality=30),
    # Extreme compression (quality 3)
    "paper-q3": SplitProfile(name="paper-q3", kernel_size_choices=[1, 3, 5, 7, 9, 11], jpeg_quality=3),
}
DEFAULT_PROFILE = "mura-sr"
