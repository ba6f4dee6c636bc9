import os
from pathlib import Path
from typing import Any, Dict, Generic, Optional, Type, TypeVar

import yaml
from pydantic import BaseModel, ValidationError

from app.common.errors import ConfigurationError

T = TypeVar("T", bound=BaseModel)

current_dir = os.path.dirname(os.path.abspath(__file__))
app_dir = os.path.dirname(os.path.dirname(current_dir))
DEFAULT_CONFIG_PATH = Path(app_dir) / "config" / "settings.config.yaml"


class ConfigLoader(Generic[T]):
    @staticmethod
    def _replace_setting_with_env_vars(value: str) -> str:
        """`${VAR:default}` -> $VAR if set, else default; `${VAR}` -> $VAR or empty."""
        if not isinstance(value, str):
            return value

        trimmed_value = value.strip()
        if not trimmed_value.startswith("${") or not trimmed_value.endswith("}"):
            return value

        inner_content = trimmed_value[2:-1]
        env_var, _, default = inner_content.partition(":")
        return os.environ.get(env_var, default)

    @staticmethod
    def _process_config(config: Any) -> Any:
        if isinstance(config, dict):
            return {key: ConfigLoader._process_config(value) for key, value in config.items()}
        if isinstance(config, list):
            return [ConfigLoader._process_config(value) for value in config]
        if isinstance(config, str):
            return ConfigLoader._replace_setting_with_env_vars(config)
        return config

    @staticmethod
    def read_yaml(path: Path) -> Dict[str, Any]:
        with open(path, "r", encoding="utf-8") as file:
            try:
                loaded = yaml.safe_load(file) or {}
            except yaml.YAMLError as e:
                raise ConfigurationError(f"{path}: not valid YAML ({e})") from e
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        return ConfigLoader._process_config(loaded)

    @staticmethod
    def load_settings(cls: Type[T], config_path: Optional[str | Path] = None) -> T:
        """Validate a YAML file into `cls`; a missing file raises FileNotFoundError."""
        path = Path(config_path) if config_path is not None else DEFAULT_CONFIG_PATH
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        processed_config = ConfigLoader.read_yaml(path)
        try:
            return cls.model_validate(processed_config)
        except ValidationError as e:
            raise ConfigurationError(f"{path}: {e}") from e

    @staticmethod
    def dump_settings(config: BaseModel, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as file:
            yaml.safe_dump(config.model_dump(mode="json"), file, sort_keys=False)
        return path
