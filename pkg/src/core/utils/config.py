import os
import logging
from typing import Optional, Tuple

# Numerical tolerances shared by all services
EPS_T = 1e-9        # simultaneity guard between distinct collision times
EPS_GEOM = 1e-7     # contact / overlap tolerance on center distances
EPS_NUM = 1e-9      # relative tolerance for conservation and replay checks

CONTACT_DISTANCE = 2.0  # unit radii

FORMAT_VERSION = 1
RNG_ALGORITHM = "PCG64"

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings:
    def __init__(self):
        """Load run settings from environment variables"""
        self.logger = logging.getLogger(__name__)

        self.output_dir = os.environ.get("COLLISION_OUTPUT_DIR", "runs")
        self.max_events = self._int_from_env("COLLISION_MAX_EVENTS", 100000)
        self.ghost_max_events = self._int_from_env("COLLISION_GHOST_MAX_EVENTS", 100000)
        self.jobs = self._int_from_env("COLLISION_JOBS", 1)
        self.log_level = os.environ.get("COLLISION_LOG_LEVEL", "INFO").upper()

    @staticmethod
    def _int_from_env(name: str, default: int) -> int:
        raw = os.environ.get(name, str(default))
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{name} must be an integer, got {raw!r}")

    def verify(self) -> Tuple[bool, Optional[str]]:
        """
        Verify the loaded settings are usable

        Returns:
            Tuple of (success, error_message)
        """
        if self.max_events < 1:
            error_msg = f"COLLISION_MAX_EVENTS must be positive, got {self.max_events}"
        elif self.ghost_max_events < 1:
            error_msg = f"COLLISION_GHOST_MAX_EVENTS must be positive, got {self.ghost_max_events}"
        elif self.jobs < 1:
            error_msg = f"COLLISION_JOBS must be positive, got {self.jobs}"
        elif self.log_level not in LOG_LEVELS:
            error_msg = f"COLLISION_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {self.log_level}"
        else:
            return True, None

        self.logger.error(error_msg)
        return False, error_msg
