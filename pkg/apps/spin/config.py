"""Every tunable of the pipeline, gathered under one JSON-loadable `Settings` object."""

from __future__ import annotations

from pathlib import Path

from pydantic import Field, ValidationError

from apps.common import console

from .body_model import ToySpec
from .camera import CameraConfig
from .dataset import DataConfig
from .errors import FormatError
from .fitting import FitConfig, FusionConfig
from .formats import Config
from .metrics import MetricsConfig
from .training import TrainConfig
from .typeshed import Schedule


class PriorConfig(Config):
    components: int = Field(default=8, ge=1)
    samples: int = Field(default=4000, ge=10)
    max_iters: int = Field(default=100, ge=1)
    reg: float = Field(default=1e-6, gt=0.0)
    jitter: float = Field(default=0.15, ge=0.0)
    seed: int = 0


class Settings(Config):
    toy: ToySpec = Field(default_factory=ToySpec)
    camera: CameraConfig = Field(default_factory=CameraConfig)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    fit: FitConfig = Field(default_factory=FitConfig)
    single_iters: int = Field(default=50, ge=1)
    staged_iters: int = Field(default=25, ge=1)
    train: TrainConfig = Field(default_factory=TrainConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)

    def schedule(self, kind: Schedule) -> FitConfig:
        """Fit configuration for a schedule, keeping weights, robustifier and tolerances from `fit`."""
        base = self.fit.model_dump(exclude={"stages"})
        if kind == "staged":
            return FitConfig.staged(self.staged_iters, **base)
        return FitConfig.single_stage(self.single_iters, **base)

    @classmethod
    def load(cls, path: str | Path | None = None) -> Settings:
        """Defaults overlaid with a JSON file; unknown keys are an error."""
        if path is None:
            return cls()
        try:
            settings = cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except ValidationError as e:
            raise FormatError(f"{path}: invalid configuration: {e.errors()[0]['msg']} at {e.errors()[0]['loc']}") from e
        console.json("config", settings.model_dump(mode="json"))
        return settings
