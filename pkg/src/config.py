"""Configuration management"""

import configparser
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import UsageError
from .schemas import RunConfig


class Settings(BaseSettings):
    """Environment-level defaults, overridable from .env or D3R_* variables"""

    model_config = SettingsConfigDict(env_prefix="D3R_", env_file=".env", case_sensitive=False, extra="ignore")

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    threads: int = 1  # 1 = single-threaded reference mode
    output_dir: Path = Path("runs")
    n_thresholds: int = 200
    seed: int = 0


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()


# INI section -> RunConfig fields it may set
_SECTIONS = {
    "run": ("root", "categories", "methods", "n_thresholds", "out_dir", "strict", "threads", "export_maps", "panels"),
    "train": ("epochs", "batch_size", "lr", "seed", "image_side", "checkpoint_every"),
    "corruption": ("corrupt_prob", "max_regions"),
    "loss": ("w_mse", "w_fft", "w_ssim"),
}
_LIST_FIELDS = ("categories", "methods")


def read_config_file(path: Path) -> dict[str, dict[str, str]]:
    """
    Reads a plain-text `key = value` run configuration with sections

    Args:
        path: INI file path

    Returns:
        Section name -> key -> raw string value
    """
    parser = configparser.ConfigParser()
    try:
        files = parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise UsageError("bad_config", f"Malformed configuration file {path}: {e}") from e
    if not files:
        raise UsageError("bad_config", f"Configuration file not found: {path}",
                         "Pass an existing file to --config")

    values: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise UsageError("bad_config", f"Unknown section [{section}] in {path}",
                             f"Valid sections: {', '.join(_SECTIONS)}")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise UsageError("bad_config", f"Unknown key '{key}' in [{section}] of {path}")
        values[section] = dict(parser.items(section))
    return values


def merge_run_config(file_values: dict[str, dict[str, str]], overrides: dict[str, Any]) -> RunConfig:
    """
    Builds a RunConfig with precedence defaults < settings < file < flags

    Args:
        file_values: Output of read_config_file (may be empty)
        overrides: Flag values; None means "not given"

    Returns:
        Validated RunConfig
    """
    settings = get_settings()
    merged: dict[str, Any] = {
        "out_dir": settings.output_dir,
        "threads": settings.threads,
        "n_thresholds": settings.n_thresholds,
        "seed": settings.seed,
    }

    for section in file_values.values():
        for key, raw in section.items():
            if key in _LIST_FIELDS:
                merged[key] = [item.strip() for item in raw.split(",") if item.strip()]
            else:
                merged[key] = raw

    for key, value in overrides.items():
        if value is not None:
            merged[key] = value

    try:
        run = RunConfig(**merged)
    except ValidationError as e:
        raise UsageError("invalid_config", f"Invalid configuration: {e}") from e
    # every method must resolve to a valid recipe before any work starts
    for method in run.methods:
        run.train_config(method)
    return run
