"""
Configuration module for the space-time DG HJB solver.
Handles environment variables, experiment manifests and the log sink.
"""

import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Union

from dotenv import load_dotenv
from loguru import logger
from pydantic import ValidationError

from .errors import ConfigError
from .models import RunConfig

# Load environment variables from .env file
load_dotenv()


class Config:
    """Configuration settings for the application."""

    PROJECT_NAME: str = "stdg-hjb"
    VERSION: str = "1.0.0"
    DESCRIPTION: str = (
        "Space-time discontinuous Galerkin solver for parabolic HJB equations "
        "with Cordes coefficients"
    )

    LOG_LEVEL: str = os.getenv("HJB_DG_LOG_LEVEL", "INFO")
    THREADS: int = int(os.getenv("HJB_DG_THREADS", "0"))

    # Memory guards for mesh construction
    MAX_UNIFORM_LEVEL: int = int(os.getenv("HJB_DG_MAX_UNIFORM_LEVEL", "7"))
    MAX_GRADED_LEVEL: int = int(os.getenv("HJB_DG_MAX_GRADED_LEVEL", "7"))

    OUTPUT_DIR: str = os.getenv("HJB_DG_OUTPUT_DIR", "results")


def resolve_threads(threads: int) -> int:
    """Map the --threads convention (0 = auto) to a worker count."""
    if threads < 0:
        raise ConfigError(f"threads must be >= 0, got {threads}")
    if threads == 0:
        return max(1, os.cpu_count() or 1)
    return threads


def configure_logging(level: str = None) -> None:
    """Install the stderr sink at the configured level."""
    logger.remove()
    logger.add(sys.stderr, level=(level or Config.LOG_LEVEL).upper(),
               format="{time:HH:mm:ss} | {level: <8} | {name}:{function} - {message}")


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Parse and validate a TOML experiment manifest.

    Args:
        path: Manifest path

    Returns:
        RunConfig: Validated, normalized configuration

    Raises:
        ConfigError: If the file is missing, malformed or fails validation
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        # message carries "(at line L, column C)"
        raise ConfigError(f"{path}: {e}") from e
    return parse_run_config(raw, source=str(path))


def parse_run_config(raw: dict, source: str = "<config>") -> RunConfig:
    """Validate an already-parsed manifest mapping."""
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        lines = []
        for err in e.errors():
            loc = ".".join(str(part) for part in err["loc"])
            lines.append(f"  {loc}: {err['msg']}")
        raise ConfigError(f"{source}: invalid configuration\n" + "\n".join(lines)) from e


# Configuration instance
config = Config()
