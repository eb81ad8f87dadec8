"""
Runtime settings and experiment configuration loading.
"""
import json
import logging
import os
import zlib
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from models.configs import ExperimentConfig
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)


class RuntimeSettings(BaseSettings):
    """Process-level settings read from TOI_* environment variables or .env"""
    model_config = SettingsConfigDict(env_prefix="TOI_", env_file=".env", extra="ignore")

    output_root: str = "runs"
    threads: int = 1
    log_level: str = "INFO"
    progress: bool = True


@lru_cache(maxsize=1)
def get_settings() -> RuntimeSettings:
    load_dotenv()
    return RuntimeSettings()


def derive_seed(seed: int, stream: str) -> int:
    """Independent, reproducible seed for a named sub-stream of the global seed."""
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(stream.encode("utf-8"))])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def parse_override(assignment: str) -> tuple:
    """
    Split 'dotted.key=value'; the value is read as JSON when it parses, else kept as text.

    Raises:
        ConfigError: no '=' or empty key
    """
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override '{assignment}' is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(tree: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    for assignment in overrides:
        path, value = parse_override(assignment)
        node = tree
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override '{assignment}': '{part}' is not a section")
            node = child
        node[path[-1]] = value
    return tree


class ConfigLoader:
    """Loads an ExperimentConfig from config/ and fills in environment defaults"""

    def __init__(self, config_file: str = "experiment_default.json", config_path: str = "config"):
        self.config_path = config_path
        self.config_file = config_file
        self.config_dict: Optional[Dict[str, Any]] = None

    def resolve(self) -> Path:
        candidate = Path(self.config_file)
        if candidate.is_file():
            return candidate
        return Path(self.config_path) / self.config_file

    def load(self, overrides: Optional[List[str]] = None, check_files: bool = True) -> ExperimentConfig:
        """
        Args:
            overrides: 'dotted.key=value' assignments applied after the file
            check_files: verify that referenced data files exist

        Raises:
            ConfigError: missing or invalid configuration
            DataError: a referenced data file does not exist
        """
        settings = get_settings()
        full_config_path = self.resolve()
        logger.info(f"Loading experiment configuration from: {full_config_path}")
        try:
            with open(full_config_path, "r", encoding="utf-8") as f:
                self.config_dict = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Configuration file not found: {full_config_path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"Configuration file {full_config_path} is not valid JSON: {e}") from None

        apply_overrides(self.config_dict, overrides or [])
        self._inject_env_defaults(settings)
        try:
            config = ExperimentConfig.model_validate(self.config_dict)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration {full_config_path}:\n{e}") from None
        if check_files:
            self._check_files(config)
        return config

    def _inject_env_defaults(self, settings: RuntimeSettings) -> None:
        """Fill output_dir and threads from the runtime settings when the config leaves them unset"""
        if not self.config_dict.get("output_dir"):
            name = self.config_dict.get("name", "default")
            self.config_dict["output_dir"] = os.path.join(settings.output_root, name)
        self.config_dict.setdefault("threads", settings.threads)

    @staticmethod
    def _check_files(config: ExperimentConfig) -> None:
        referenced = [config.data.path]
        if config.imputation.candidate.startswith("external:"):
            referenced.append(config.imputation.candidate.split(":", 1)[1])
        for path in referenced:
            if not Path(path).is_file():
                raise DataError(f"referenced file does not exist: {path}")


def dump_config(config: ExperimentConfig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.model_dump_json(indent=2), encoding="utf-8")
    return path
