"""
Configuration manager for loading and validating experiment configurations.
"""

import yaml
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar
import logging

from pydantic import BaseModel, ValidationError

from ..models.config import ExperimentConfig, NuclrConfig, TrainConfig, VarianceStudyConfig

logger = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class ConfigError(Exception):
    """Exception raised for configuration errors."""
    pass


class ConfigManager:
    """
    Builds validated experiment configurations.

    Command-line flag values form the base layer; an optional YAML or JSON
    file (YAML parses JSON too) is merged over them before validation.
    """

    def __init__(self, config_file: Optional[str] = None):
        """
        Initialize configuration manager.

        Args:
            config_file: Optional YAML/JSON file whose values override flags
        """
        self.config_file = Path(config_file) if config_file else None
        self._file_data: Optional[Dict[str, Any]] = None

        if self.config_file is not None and not self.config_file.exists():
            raise ConfigError(f"Configuration file not found: {self.config_file}")

        logger.debug(f"ConfigManager initialized with file: {self.config_file}")

    def load_yaml_file(self) -> Dict[str, Any]:
        """
        Load the configuration file.

        Returns:
            Dictionary containing the parsed data (empty when no file is set)

        Raises:
            ConfigError: If the file cannot be read, parsed, or is not a mapping
        """
        if self.config_file is None:
            return {}
        if self._file_data is not None:
            return self._file_data

        try:
            with open(self.config_file, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Failed to parse configuration file {self.config_file}: {e}")
        except OSError as e:
            raise ConfigError(f"Failed to read configuration file {self.config_file}: {e}")

        if data is None:
            raise ConfigError(f"Configuration file is empty: {self.config_file}")
        if not isinstance(data, dict):
            raise ConfigError(f"Configuration file must hold a mapping: {self.config_file}")
        self._file_data = data
        return data

    def build(
        self, model_cls: Type[ConfigT], overrides: Optional[Dict[str, Any]] = None
    ) -> ConfigT:
        """
        Merge flag values with the file and validate.

        Args:
            model_cls: Pydantic config class
            overrides: Flag values; None entries mean "not given" and are dropped

        Returns:
            Validated config instance

        Raises:
            ConfigError: If the merged values do not validate
        """
        data = {k: v for k, v in (overrides or {}).items() if v is not None}
        data = _deep_merge(data, self.load_yaml_file())
        try:
            config = model_cls(**data)
        except ValidationError as e:
            raise ConfigError(f"Invalid {model_cls.__name__}: {e}")
        except ValueError as e:
            raise ConfigError(f"Invalid {model_cls.__name__}: {e}")

        for warning in self.validate_config(config):
            logger.warning(warning)
        logger.info(f"✓ {model_cls.__name__} loaded")
        return config

    @staticmethod
    def validate_config(config: BaseModel) -> list[str]:
        """
        Check a validated config for settings that run but are likely mistakes.

        Returns:
            List of warning messages (empty if no warnings)
        """
        warnings = []

        if isinstance(config, ExperimentConfig):
            if config.n_true_risk < 10 * max(config.n_list):
                warnings.append(
                    f"n_true_risk={config.n_true_risk} is small next to n={max(config.n_list)}; "
                    "true-risk noise may dominate the generalization error"
                )
            if config.repeats < 3:
                warnings.append(f"repeats={config.repeats} gives very noisy sweep means")

        if isinstance(config, VarianceStudyConfig) and config.repeats < 100:
            warnings.append(f"repeats={config.repeats} is too few for stable variance estimates")

        nuclr = config.nuclr if isinstance(config, TrainConfig) else config
        if isinstance(nuclr, NuclrConfig):
            if nuclr.freeze_epochs >= nuclr.epochs > 0 and nuclr.learn_zeta:
                warnings.append("freeze_epochs covers every epoch; zeta will never update")
            if nuclr.weight_decay and nuclr.w_optimizer != "adamw":
                logger.debug("weight_decay is only used by the adamw optimizer")

        return warnings


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged
