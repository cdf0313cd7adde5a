from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

TRUE_VALUES = {"True", "true", "1", "yes", "Y", "T"}


@dataclass
class AppSettings:
    """Application configuration"""

    DEBUG: bool = field(default_factory=lambda: os.getenv("CIRLAB_DEBUG", "False") in TRUE_VALUES)
    """Assert buffer and pool invariants after every training step."""
    OUTPUT_ROOT: Path = field(default_factory=lambda: Path(os.getenv("CIRLAB_OUTPUT_ROOT", "out")))
    """Directory that receives `<run-name>/` artifact folders."""
    WORKERS: int = field(default_factory=lambda: int(os.getenv("CIRLAB_WORKERS", "1")))
    """Worker processes used by `ablate` to run independent seeds."""


@dataclass
class LogSettings:
    """Logger configuration"""

    LEVEL: str = field(default_factory=lambda: os.getenv("LOG_LEVEL", "INFO").upper())
    """Stdlib log levels.

    Only emit logs at this level, or higher.
    """
    FORMAT: str = field(default_factory=lambda: os.getenv("LOG_FORMAT", "auto").lower())
    """`console`, `json`, or `auto` (console on a TTY, JSON otherwise)."""


@dataclass
class Settings:
    app: AppSettings = field(default_factory=AppSettings)
    log: LogSettings = field(default_factory=LogSettings)

    @classmethod
    @lru_cache(maxsize=1, typed=True)
    def from_env(cls, dotenv_filename: str = ".env") -> Settings:
        env_file = Path(f"{os.curdir}/{dotenv_filename}")
        if env_file.is_file():
            from dotenv import load_dotenv

            load_dotenv(env_file, override=True)
        return Settings()


def get_settings() -> Settings:
    return Settings.from_env()
