from pathlib import Path
from typing import Optional

from app.services.config.config_loader import ConfigLoader
from app.services.config.config_models import TotalConfig


# Singleton
class ConfigService:
    _config: TotalConfig

    def __init__(self, config_path: Optional[str | Path] = None):
        self.config_path = config_path
        self._config = ConfigLoader.load_settings(TotalConfig, config_path)

    def get(self) -> TotalConfig:
        return self._config

    def snapshot(self, out_dir: str | Path) -> Path:
        """Write the validated configuration as resolved_config.yaml."""
        return ConfigLoader.dump_settings(self._config, Path(out_dir) / "resolved_config.yaml")
