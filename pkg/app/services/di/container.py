from pathlib import Path
from typing import Optional

import punq

from app.services.config.config_service import ConfigService


class Container:
    def __init__(self):
        self.punq_container = punq.Container()
        self.punq_container.register(ConfigService, factory=lambda: ConfigService(), scope=punq.Scope.singleton)

    def get_container(self) -> punq.Container:
        return self.punq_container

    def configure(self, config_path: Optional[str | Path]) -> ConfigService:
        """Re-point the container at a run's config file."""
        service = ConfigService(config_path)
        self.punq_container = punq.Container()
        self.punq_container.register(ConfigService, instance=service)
        return service


container = Container()


def get_config_service() -> ConfigService:
    return container.get_container().resolve(ConfigService)


def configure_container(config_path: Optional[str | Path]) -> ConfigService:
    return container.configure(config_path)
