# Configuration loading: JSON scenario files plus environment settings
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from shared.errors import ConfigurationError
from shared.models import SystemConfig

# Pick up CFMM_* settings from a local .env file when present
load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_WORKERS = 4


def log_level() -> str:
    """Logging level name from CFMM_LOG_LEVEL (default INFO)."""
    return os.getenv("CFMM_LOG_LEVEL", "INFO").upper()


def worker_count() -> int:
    """Number of drops simulated concurrently, from CFMM_WORKERS."""
    raw = os.getenv("CFMM_WORKERS")
    if not raw:
        return DEFAULT_WORKERS
    try:
        workers = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer CFMM_WORKERS={raw!r}")
        return DEFAULT_WORKERS
    return max(1, workers)


def presets_path() -> Path:
    """Location of the experiment presets file (CFMM_PRESETS overrides the bundled one)."""
    override = os.getenv("CFMM_PRESETS")
    if override:
        return Path(override)
    return Path(__file__).resolve().parent.parent / "coordinator" / "experiment_presets.json"


def parse_system_config(data: Dict[str, Any], source: str = "<dict>") -> SystemConfig:
    """Validate a mapping of config fields, converting validation failures to ConfigurationError."""
    try:
        return SystemConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration in {source}: {e}") from e


def load_system_config(path: Union[str, Path]) -> SystemConfig:
    """
    Load a SystemConfig from a JSON file.

    Keys may use either the field names or the symbol aliases (``L``, ``K``, ...).
    Keys that match neither are rejected.

    Raises:
        ConfigurationError: unreadable file, malformed JSON or invalid values
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Malformed JSON in {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file {path} must contain a JSON object")

    cfg = parse_system_config(data, source=str(path))
    logger.info(f"Loaded system config from {path}")
    return cfg


def with_overrides(cfg: SystemConfig, **fields: Any) -> SystemConfig:
    """Copy of ``cfg`` with some fields replaced, re-validated as a whole."""
    data = cfg.model_dump()
    data.update(fields)
    return parse_system_config(data, source="overrides")
