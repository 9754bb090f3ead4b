from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="ORBITMATE_", env_file=".env", extra="ignore")

    # Output
    OUTPUT_DIR: str = "results"
    LOG_LEVEL: str = "INFO"

    # Reproducibility / parallelism
    SEED: int = 0
    THREADS: int = 1

    # Integrator
    STEPS_PER_PERIOD: int = 2000  # default h = tau / STEPS_PER_PERIOD
    PROJECTION_TOL: float = 1e-13
    MAX_PROJECTION_ITER: int = 20
    EVENT_TIME_TOL: float = 1e-12
    DRIFT_TOL: float = 1e-6  # states loaded farther than this off the manifold are projected with a warning

    # Forcing
    SUP_NORM_SAMPLES: int = 4096

    # Boundary verification
    BOUNDARY_RESOLUTION: int = 24
    TANGENCY_TOL: float = 1e-8

    # Shooting
    NEWTON_FD_STEP: float = 1e-6
    NEWTON_TOL: float = 1e-10
    NEWTON_MAX_ITER: int = 30

    # Energy cap sweep (find_energy_cap)
    ENERGY_SWEEP_START: float = 1e-6
    ENERGY_SWEEP_RATIO: float = 1.02
    ENERGY_SWEEP_MAX: float = 1e6
    ENERGY_SAFETY: float = 1.1

    # Optional default scenario for the HTTP service
    DEFAULT_SCENARIO: Optional[str] = None


settings = Settings()
