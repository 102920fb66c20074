# /ucsl/config.py
"""
Run configuration shared by every CLI subcommand.

Values come from, lowest precedence first: field defaults, a ``.env`` file,
``UCSL_*`` environment variables, a flat YAML config file, then command-line
flags. Flags and file keys use the field names below.
"""
import logging
import os
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from exceptions import ConfigFileError, InvalidParameter
from models import LossConfig, TrackerConfig
from utils import write_yaml_file

logger = logging.getLogger(__name__)

RUN_CONFIG_FILENAME = "run_config.yaml"


class RunConfig(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="UCSL_", env_file=".env", extra="ignore")

    # losses
    tau: float = Field(0.1, gt=0)
    theta: float = Field(0.7, gt=0, lt=1)
    epsilon: float = Field(1e-12, gt=0)
    interval: int = Field(1, ge=1)
    w_dsc: float = Field(1.0, ge=0)
    w_isc: float = Field(1.0, ge=0)
    w_cc: float = Field(1.0, ge=0)
    w_ac: float = Field(1.0, ge=0)
    indirect_pairs: Literal["adjacent", "all"] = "adjacent"

    # tracker
    embed_gate: float = Field(0.4, gt=0, lt=1)
    iou_gate: float = Field(0.5, gt=0, lt=1)
    buffer: int = Field(30, ge=1)
    ema_alpha: float = Field(0.9, ge=0, le=1)
    min_confidence: float = Field(0.4, ge=0, le=1)
    motion_gate: bool = False
    lost_iou_matching: bool = False

    # evaluation
    iou_threshold: float = Field(0.5, gt=0, le=1)

    # runs
    scenario: str | None = Field(None, description="Path of a YAML scenario document.")
    seed: int = Field(0, ge=0)
    steps: int = Field(100, ge=1)
    lr: float = Field(0.05, gt=0, le=1)
    workers: int = Field(4, ge=1)
    output_dir: str = "out"

    def loss_config(self) -> LossConfig:
        return LossConfig(**self.model_dump(include=set(LossConfig.model_fields)))

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(**self.model_dump(include=set(TrackerConfig.model_fields)))


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    """
    Loads a flat YAML mapping of RunConfig keys.

    Raises:
        ConfigFileError: missing or unparsable file, a non-mapping document or unknown keys.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"Config file not found: {path}")
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigFileError(f"{path} is not valid YAML: {exc}")
    if not isinstance(document, dict):
        raise ConfigFileError(f"{path} must hold a flat mapping of config keys")
    unknown = sorted(set(document) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigFileError(f"{path} has unknown keys: {', '.join(map(str, unknown))}")
    return document


def load_run_config(config_path: str | os.PathLike | None = None, **overrides: Any) -> RunConfig:
    """
    Materializes the run configuration. Overrides set to None are treated as
    "flag not given" and do not mask lower-precedence values.
    """
    values = read_config_file(config_path) if config_path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except ValidationError as exc:
        raise InvalidParameter("; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()))
    logger.debug(f"Run config: {cfg.model_dump()}")
    return cfg


def echo_config(cfg: RunConfig, output_dir: str | None = None) -> str:
    """Writes the materialized config as run_config.yaml (sorted keys) and returns its path."""
    return write_yaml_file(cfg.model_dump(mode="json"), output_dir or cfg.output_dir, RUN_CONFIG_FILENAME)
