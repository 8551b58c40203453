"""
Configuration settings for the PGRD experiment harness
"""
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings (environment / .env), not part of a RunConfig"""

    model_config = SettingsConfigDict(
        env_prefix="PGRD_",
        env_file=".env",
        extra="ignore",
    )

    PROJECT_NAME: str = "PGRD - Prior-Guided Residual Diffusion"
    VERSION: str = "0.1.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Defaults for the CLI
    OUTPUT_DIR: Path = Path("runs/default")
    EXPERIMENT_CONFIG: Path = Path("config/experiment.yaml")

    # Sampling / evaluation parallelism (never changes outputs)
    MAX_WORKERS: int = 4

    # Training progress logging cadence (steps)
    LOG_EVERY: int = 50

    # Optional cap on per-case evaluation (debugging)
    EVAL_CASE_LIMIT: Optional[int] = None


settings = Settings()
