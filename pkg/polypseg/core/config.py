from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    PROJECT_NAME: str = "Polyp-PVT Segmentation"
    VERSION: str = "1.0.0"
    DEBUG: bool = False

    # Runtime
    DEVICE: str = "cpu"
    LOG_LEVEL: str = "INFO"
    PROGRESS: bool = True
    NUM_WORKERS: int = Field(0, ge=0)
    MAX_EVAL_WORKERS: int = Field(4, ge=1)

    # Output locations
    OUTPUT_DIR: Path = Path("./runs")
    DATA_ROOT: Optional[Path] = None

    # Evaluation toolbox
    THRESHOLD_LEVELS: int = Field(256, ge=2)
    FROC_STRIDE: int = Field(8, ge=1)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="POLYPSEG_",
        case_sensitive=True,
        extra="ignore",
    )

    @field_validator("LOG_LEVEL")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {v}")
        return level


settings = Settings()
