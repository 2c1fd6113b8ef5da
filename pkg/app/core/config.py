import os
from typing import List

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    PROJECT_NAME: str = "spinor-embeddings"
    LOG_LEVEL: str = os.environ.get("SPINOR_LOG_LEVEL", "WARNING")

    # Algebra
    MAX_DIMENSION: int = 12  # dense storage 2^12 coefficients
    BRANCH_EPSILON: float = 1e-12
    UNIT_TOLERANCE: float = 1e-9
    SERIES_TERMS: int = 16
    SCALING_THRESHOLD: float = 0.5
    MAX_TABLE_DIMENSION: int = 5

    # Autodiff
    FD_STEP: float = 1e-6

    # Positional rotors
    POSITIONAL_BASE_FREQUENCY: float = 1.0
    POSITIONAL_DECAY: float = 0.1

    # Training
    GRAD_CLIP: float = 10.0
    FFW_HIDDEN: int = 16
    INIT_SCALE: float = 0.1
    ARMIJO_CONSTANT: float = 0.25  # sufficient decrease in the rotor fit line search
    ABLATION_MAX_DIMENSION: int = 6

    # Corpora and model files
    VALIDATION_FRACTION: float = 0.1
    UNK_TOKEN: str = "<unk>"
    MODEL_FORMAT_VERSION: int = 1
    CSV_COLUMNS_PROJECTION: List[str] = ["token", "x", "y"]

    @field_validator("LOG_LEVEL")
    @classmethod
    def upper_level(cls, value: str) -> str:
        return value.upper()

    model_config = SettingsConfigDict(
        env_file=".env", env_prefix="SPINOR_", case_sensitive=True
    )


settings = Settings()
