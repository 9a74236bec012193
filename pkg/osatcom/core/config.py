import logging
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

VERSION = "1.0.0"

logger = logging.getLogger(__name__)


def _default_threads() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"⚠️ {name}={raw!r} is not an integer, using {default}")
        return default


class Settings:
    def __init__(self):
        self.debug: bool = os.getenv("DEBUG", "False").lower() == "true"
        self.log_level: str = os.getenv("LOG_LEVEL", "INFO")

        # Concurrency settings
        self.threads: int = _env_int("OSATCOM_THREADS", _default_threads())
        self.chunk_trials: int = _env_int("OSATCOM_CHUNK_TRIALS", 4096)

        # Fading settings (shadowing has no published values)
        self.log_mu: float = 0.0
        self.log_sigma: float = 0.5

        # Dual solver settings
        self.solver_tol: float = 1e-6
        self.solver_max_iterations: int = 500
        self.dogleg_initial_radius: float = 1.0
        self.dogleg_initial_multiplier: float = 1.0
        self.dogleg_shrink: float = 0.25
        self.dogleg_expand: float = 2.0
        self.dogleg_accept_ratio: float = 1e-4
        self.dogleg_min_radius: float = 1e-12
        self.barrier_initial: float = 1e-2
        self.barrier_decay: float = 0.1
        self.barrier_final: float = 1e-8

        # Numerical tolerances
        self.psd_tol: float = 1e-10
        self.feasibility_tol: float = 1e-8


def get_settings():
    """Get settings instance"""
    return Settings()
