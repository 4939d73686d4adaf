"""
shared_config.py - Centralized settings for the percolation laboratory

Ambient settings come from the environment (optionally a .env file); run
parameters are layered on top as defaults < environment < TOML file < flags.
"""

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

from errors import ValidationError

CODE_VERSION = "0.3.0"
ENV_PREFIX = "LPP_"

_dotenv_loaded = False


class Settings(BaseModel):
    log_level: str = "INFO"
    log_file: Optional[str] = None
    out_dir: str = "results"
    threads: int = Field(default=1, ge=1)
    memory_budget_bytes: int = Field(default=2 * 1024 ** 3, gt=0)
    oracle_cap: int = Field(default=10 ** 7, gt=0)


def load_shared_config(dotenv_path: Optional[str] = None) -> Settings:
    """
    Load .env once and build Settings from LPP_* environment variables

    Args:
        dotenv_path: Explicit .env file; the default search is used when None

    Returns:
        Settings: The ambient settings
    """
    global _dotenv_loaded
    if not _dotenv_loaded:
        if dotenv_path:
            load_dotenv(dotenv_path)
        else:
            load_dotenv()
        _dotenv_loaded = True

    values: Dict[str, Any] = {}
    for field_name in Settings.model_fields:
        raw = os.getenv(f"{ENV_PREFIX}{field_name.upper()}")
        if raw is not None and raw != "":
            values[field_name] = raw
    try:
        return Settings(**values)
    except Exception as e:
        raise ValidationError(f"Invalid {ENV_PREFIX}* environment setting: {e}") from e


def load_toml_config(path: str) -> Dict[str, Any]:
    """Read a TOML run configuration; keys use underscores in place of dashes"""
    config_path = Path(path)
    if not config_path.exists():
        raise ValidationError(f"Config file not found: {path}")
    try:
        with open(config_path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ValidationError(f"Config file {path} is not valid TOML: {e}") from e
    return {key.replace("-", "_"): value for key, value in data.items()}


def merge_config(defaults: Dict[str, Any], *layers: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Merge configuration layers left to right; None values never override"""
    merged = dict(defaults)
    for layer in layers:
        if not layer:
            continue
        for key, value in layer.items():
            if value is not None:
                merged[key] = value
    return merged
