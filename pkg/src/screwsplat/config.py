"""Configuration: environment settings and algorithm configs."""

from enum import Enum

import torch
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings

from screwsplat.errors import InvalidConfigError

DTYPE = torch.float64


class LogLevel(str, Enum):
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"


class Settings(BaseSettings):
    model_config = {"env_prefix": "SCREWSPLAT_"}

    threads: int = 1
    log_level: LogLevel = LogLevel.INFO
    default_seed: int = 0
    cache_max_size: int = 8
    cache_ttl_seconds: int = 600


class _Config(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    @classmethod
    def build(cls, **values):
        """Validate like the constructor but raise InvalidConfigError."""
        try:
            return cls(**values)
        except ValidationError as e:
            raise InvalidConfigError(str(e)) from e


class InitConfig(_Config):
    n_gaussians: int = 10000
    cube_half_width: float = 1.0
    n_configs: int = 1
    n_revolute: int = 8
    n_prismatic: int = 8
    initial_opacity: float = Field(0.1, gt=0.0, lt=1.0)
    initial_confidence: float = Field(0.9, gt=0.0, lt=1.0)
    axis_sample_range: float = 0.5
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @model_validator(mode="after")
    def _check(self):
        if self.n_gaussians <= 0:
            raise ValueError("n_gaussians must be positive")
        if self.n_configs <= 0:
            raise ValueError("n_configs must be positive")
        if self.n_revolute < 0 or self.n_prismatic < 0:
            raise ValueError("screw counts must be non-negative")
        if self.cube_half_width <= 0:
            raise ValueError("cube_half_width must be positive")
        return self

    @classmethod
    def desk(cls, **overrides) -> "InitConfig":
        return cls.build(**{"n_gaussians": 2000, **overrides})

    @classmethod
    def real_capture(cls, **overrides) -> "InitConfig":
        return cls.build(**{"cube_half_width": 0.7, **overrides})


class LossConfig(_Config):
    lambda_dssim: float = Field(0.2, ge=0.0, le=1.0)
    beta: float = Field(0.002, ge=0.0)
    ssim_window: int = 11
    ssim_sigma: float = 1.5

    @model_validator(mode="after")
    def _check(self):
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be a positive odd integer")
        return self

    @classmethod
    def real_capture(cls, **overrides) -> "LossConfig":
        return cls.build(**{"beta": 0.005, **overrides})


class FitConfig(_Config):
    iterations: int = 30000
    lr_position: float = 0.00016
    lr_position_final: float = 0.0000016
    lr_rotation: float = 0.001
    lr_scale: float = 0.005
    lr_opacity: float = 0.05
    lr_color: float = 0.0025
    lr_part_logits: float = 0.1
    lr_raw_axis: float = 0.003
    lr_confidence_logit: float = 0.01
    lr_theta: float = 0.01
    reset_interval: int = 2500
    opacity_reset_interval: int = 3000
    selection_fraction: float = Field(0.8, gt=0.0, le=1.0)
    confidence_threshold: float = Field(0.1, gt=0.0)
    interval_threshold_revolute: float = Field(0.1, gt=0.0)
    interval_threshold_prismatic: float = Field(0.03, gt=0.0)
    prune_opacity: float = Field(0.005, ge=0.0)
    opacity_reset_value: float = Field(0.05, gt=0.0, lt=1.0)
    log_interval: int = 100
    checkpoint_interval: int = 0
    loss_history: int = 1000
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        r, o = self.reset_interval, self.opacity_reset_interval
        if r <= 0 or o <= 0:
            raise ValueError("reset intervals must be positive")
        if r % o == 0 or o % r == 0:
            raise ValueError(
                f"reset_interval ({r}) and opacity_reset_interval ({o}) must be asynchronous"
            )
        return self

    @property
    def selection_iteration(self) -> int:
        return int(self.selection_fraction * self.iterations)

    @classmethod
    def desk(cls, **overrides) -> "FitConfig":
        values = {
            "iterations": 3000,
            "reset_interval": 250,
            "opacity_reset_interval": 300,
            "lr_position": 0.0016,
            "lr_position_final": 0.000016,
            "log_interval": 50,
        }
        return cls.build(**{**values, **overrides})


class ControlConfig(_Config):
    n_calls: int = 50
    n_random: int = 10
    n_candidates: int = 2048
    noise: float = 1e-6
    trajectory_offset: float = 0.05
    trajectory_steps: int = 20
    robot_base: tuple[float, float, float] = (0.0, -2.0, 0.0)

    @model_validator(mode="after")
    def _check(self):
        if not 1 <= self.n_random < self.n_calls:
            raise ValueError("need 1 <= n_random < n_calls")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be positive")
        return self


class SynthConfig(_Config):
    n_cameras: int = 8
    n_configs: int = 5
    width: int = 64
    height: int = 64
    camera_radius: float = 2.6
    focal_scale: float = 1.1
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def focal(self) -> float:
        return self.focal_scale * max(self.width, self.height)
