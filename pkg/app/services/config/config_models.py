from pydantic import BaseModel, ConfigDict, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.services.baselines.models import EvictionPolicy
from app.services.config.env_variables import set_env_variables_from_dotenv
from app.services.gating.models import GateConfig
from app.services.kvcache.models import CacheConfig
from app.services.model.models import ModelConfig
from app.services.tasks.models import TaskConfig
from app.services.training.models import TrainConfig

set_env_variables_from_dotenv()


class AppConfig(BaseSettings):
    """Run-level settings. The YAML resolves `${APP_*}` itself; a directly built instance reads APP_* from the environment."""

    model_config = SettingsConfigDict(env_prefix="APP_", extra="forbid")

    name: str = "spkv-lab"
    version: str = "0.1.0"
    log_level: str = "info"
    seed: int = 0
    target_env: str = "development"


class TotalConfig(BaseModel):
    """Every section of a run configuration; unknown keys anywhere are rejected."""

    model_config = ConfigDict(extra="forbid")

    app: AppConfig = Field(default_factory=AppConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    gate: GateConfig = Field(default_factory=GateConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    cache: CacheConfig = Field(default_factory=CacheConfig)
    task: TaskConfig = Field(default_factory=TaskConfig)
    baselines: EvictionPolicy = Field(default_factory=EvictionPolicy)
