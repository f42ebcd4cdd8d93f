"""
Settings module for the statistical model checker.
Provides Pydantic models for the runtime settings in config/settings.json and
the logging setup shared by the command-line entry points.
"""

from pathlib import Path
from typing import Optional
import json
import logging
import os

import psutil
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

# Set up logging
logger = logging.getLogger(__name__)

DEFAULT_SETTINGS_PATH = Path(__file__).parent / "config" / "settings.json"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class GeneralSettings(BaseModel):
    """Logging and file locations."""
    log_level: str = Field(default="INFO", description="Root log level (DEBUG, INFO, WARNING, ERROR)")
    log_directory: str = Field(default="logs", description="Directory for the log file")
    log_file: str = Field(default="sos_smc.log", description="Log file name")
    output_directory: str = Field(default="outputs", description="Directory for relative --out paths")


class SmcSettings(BaseModel):
    """Defaults for the simulation management kernel."""
    default_seed: int = Field(default=0, description="Seed used when neither the session nor the CLI sets one")
    workers: int = Field(default=1, ge=0, description="Sample workers; 0 means one per physical core")
    batch_size: int = Field(default=64, ge=1, description="Trace indices handed to a worker at once")
    sprt_max_samples: int = Field(default=1_000_000, ge=1, description="Safety cap for the sequential test")


class SimulationSettings(BaseModel):
    """Trace dump settings."""
    max_dump_steps: int = Field(default=10_000, ge=0, description="Largest --steps accepted by simulate")


class OutputSettings(BaseModel):
    """Result rendering defaults."""
    format: str = Field(default="text", description="text or json")
    include_timing: bool = Field(default=True, description="Emit the timing section in json output")


class Settings(BaseModel):
    """Complete runtime configuration."""
    general: GeneralSettings = Field(default_factory=GeneralSettings)
    smc: SmcSettings = Field(default_factory=SmcSettings)
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)

    def resolved_workers(self) -> int:
        """Worker count with 0 replaced by the number of physical cores."""
        if self.smc.workers > 0:
            return self.smc.workers
        return psutil.cpu_count(logical=False) or 1


def load_settings(path: Optional[str] = None) -> Settings:
    """
    Load settings from a JSON file.

    Args:
        path: Path to the settings file; defaults to $SOS_SMC_SETTINGS or
            config/settings.json next to this module

    Returns:
        Settings object; defaults when the file does not exist

    Raises:
        ValueError: If the file is not valid JSON or does not match the schema
    """
    load_dotenv()
    settings_path = Path(path or os.environ.get("SOS_SMC_SETTINGS") or DEFAULT_SETTINGS_PATH)

    if not settings_path.exists():
        logger.debug(f"Settings file not found, using defaults: {settings_path}")
        settings = Settings()
    else:
        try:
            with open(settings_path, 'r', encoding='utf-8') as f:
                settings = Settings(**json.load(f))
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON in settings file {settings_path}: {e}")
        except ValidationError as e:
            raise ValueError(f"Invalid settings in {settings_path}: {e}")

    env_level = os.environ.get("SOS_SMC_LOG_LEVEL")
    if env_level:
        settings.general.log_level = env_level.upper()
    return settings


def setup_logging(settings: Settings, level: Optional[str] = None) -> None:
    """Configure the root logger with a file handler and a console handler."""
    log_dir = Path(settings.general.log_directory)
    log_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=(level or settings.general.log_level).upper(),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(log_dir / settings.general.log_file),
            logging.StreamHandler()
        ],
        force=True,
    )
