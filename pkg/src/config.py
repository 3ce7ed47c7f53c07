"""
Configuration settings for the FSI laboratory
"""

import os
import sys
import json
import hashlib
from pathlib import Path
from typing import Any, Dict, Union

from pydantic_settings import BaseSettings
from dotenv import load_dotenv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import ConfigurationError
from .models import RunConfig

load_dotenv()

class Settings(BaseSettings):
    """Application settings"""

    # Logging and output
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "runs")
    CSV_DIGITS: int = int(os.getenv("CSV_DIGITS", "17"))
    DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", "0"))

    # Eigen-solver configuration
    DENSE_EIG_LIMIT: int = int(os.getenv("DENSE_EIG_LIMIT", "2000"))
    EIG_TOL: float = float(os.getenv("EIG_TOL", "1e-10"))

    # Nonlinear solver configuration
    NEWTON_TOL: float = float(os.getenv("NEWTON_TOL", "1e-10"))
    NEWTON_MAX_ITER: int = int(os.getenv("NEWTON_MAX_ITER", "25"))
    MAX_LINE_SEARCH_HALVINGS: int = int(os.getenv("MAX_LINE_SEARCH_HALVINGS", "8"))
    MAX_STEP_HALVINGS: int = int(os.getenv("MAX_STEP_HALVINGS", "6"))
    MAX_CONTINUATION_BISECTIONS: int = int(os.getenv("MAX_CONTINUATION_BISECTIONS", "6"))

    # Assembly
    QUADRATURE_POINTS: int = int(os.getenv("QUADRATURE_POINTS", "4"))
    ASSEMBLY_CHUNK: int = int(os.getenv("ASSEMBLY_CHUNK", "4096"))

    class Config:
        env_file = ".env"

# Global settings instance
settings = Settings()

def validate_settings():
    """Validate numeric settings"""
    invalid_fields = []
    for field in ["CSV_DIGITS", "DENSE_EIG_LIMIT", "NEWTON_MAX_ITER", "ASSEMBLY_CHUNK"]:
        if getattr(settings, field) <= 0:
            invalid_fields.append(field)
    for field in ["EIG_TOL", "NEWTON_TOL"]:
        if not getattr(settings, field) > 0:
            invalid_fields.append(field)
    for field in ["MAX_LINE_SEARCH_HALVINGS", "MAX_STEP_HALVINGS", "MAX_CONTINUATION_BISECTIONS"]:
        if getattr(settings, field) < 0:
            invalid_fields.append(field)
    # Duffy rule with n points is exact to degree 2n - 3 on tetrahedra; degree 5 is required
    if settings.QUADRATURE_POINTS < 4:
        invalid_fields.append("QUADRATURE_POINTS")

    if invalid_fields:
        raise ValueError(f"Invalid settings: {', '.join(invalid_fields)}")

def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a TOML run configuration.

    Raises:
        ConfigurationError: if the file is missing or is not valid TOML.
        pydantic.ValidationError: if the content violates the schema.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Malformed config {path}: {e}") from e
    return RunConfig.model_validate(raw)

def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical JSON form of a validated config"""
    payload: Dict[str, Any] = config.model_dump(mode="json")
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
