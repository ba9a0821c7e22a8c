"""Process-wide settings read from the environment and an optional .env file."""
from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

ENV_PATH = Path(__file__).parent.parent / ".env"


class InvertKitSettings(BaseSettings):
    """INVERTKIT_* environment variables."""
    model_config = SettingsConfigDict(env_prefix="INVERTKIT_", env_file=ENV_PATH, extra="ignore")

    threads: int = Field(4, ge=1, description="Cap on worker threads for per-image work")
    log_level: str = Field("INFO", description="Root logger level")


@lru_cache(maxsize=1)
def get_settings() -> InvertKitSettings:
    return InvertKitSettings()
