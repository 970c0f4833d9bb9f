"""
Configuration settings for the reconstruction toolkit.
Loads environment variables and provides runtime settings.
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Literal


class Settings(BaseSettings):
    """
    Runtime settings loaded from environment variables (prefix RECON_).
    """

    # Project
    PROJECT_NAME: str = "Recon Desk"
    VERSION: str = "1.0.0"
    DESCRIPTION: str = "Desk-scale generalizable neural surface reconstruction with view-combination scoring"

    # Logging
    LOG_LEVEL: str = "INFO"

    # Numerics
    DEBUG: bool = False  # check every op input for NaN/Inf
    PRECISION: Literal["single", "double"] = "single"

    # Execution
    THREADS: int = 1
    SEED: int = 0
    MAX_COMBINATIONS: int = 1_000_000
    RAY_CHUNK: int = 1024

    model_config = SettingsConfigDict(
        env_prefix="RECON_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


# Create global settings instance
settings = Settings()
