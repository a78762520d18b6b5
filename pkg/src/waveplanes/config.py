"""
Configuration for WavePlanes Runs

Schema-validated run configuration (model, training, data, output sections),
plus a manager that loads JSON configs, applies overrides and writes the fully
resolved config next to run artifacts.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .wavelets import SUPPORTED_FAMILIES, is_power_of_two

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]

DEFAULT_BBOX: Tuple[Vec3, Vec3] = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
DEFAULT_K = (1.0, 0.4, 0.2)


def _round_up_pow2(value: int, name: str) -> int:
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    if is_power_of_two(value):
        return value
    rounded = 1 << (value - 1).bit_length()
    logger.warning(f"{name}={value} is not a power of two, rounding up to {rounded}")
    return rounded


class ModelConfig(BaseModel):
    """Shape and fusion settings of the wavelet field and its decoder"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    features: int = Field(64, ge=1)
    levels: int = Field(2, ge=1)
    spatial_res: Tuple[int, int] = (64, 64)
    time_res: int = 16
    scales: Tuple[int, ...] = (1, 2)
    family: str = "haar"
    fusion: Literal["hp", "zmm", "zam"] = "zmm"
    k: Tuple[float, ...] = DEFAULT_K
    bbox: Tuple[Vec3, Vec3] = DEFAULT_BBOX
    t_range: Tuple[float, float] = (0.0, 1.0)
    static_mode: bool = False
    decoder_layers: Literal[3, 4] = 3
    decoder_width: int = Field(64, ge=1)
    init_range: float = Field(0.01, ge=0.0)

    @model_validator(mode="before")
    @classmethod
    def _level_dependent_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        levels = data.get("levels", 2)
        if isinstance(levels, int) and levels >= 1:
            if "k" not in data:
                data["k"] = DEFAULT_K if levels == 2 else tuple([1.0] * (levels + 1))
            if "scales" not in data:
                data["scales"] = tuple(range(1, levels + 1))[-2:]
        return data

    @field_validator("spatial_res")
    @classmethod
    def _spatial_pow2(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        return (_round_up_pow2(value[0], "spatial_res[0]"), _round_up_pow2(value[1], "spatial_res[1]"))

    @field_validator("time_res")
    @classmethod
    def _time_pow2(cls, value: int) -> int:
        return _round_up_pow2(value, "time_res")

    @field_validator("family")
    @classmethod
    def _known_family(cls, value: str) -> str:
        if value not in SUPPORTED_FAMILIES:
            raise ValueError(f"family must be one of {SUPPORTED_FAMILIES}, got '{value}'")
        return value

    @model_validator(mode="after")
    def _check_consistency(self) -> "ModelConfig":
        if len(self.k) != self.levels + 1:
            raise ValueError(f"k needs {self.levels + 1} entries for levels={self.levels}, got {len(self.k)}")
        if self.k[0] != 1.0:
            raise ValueError(f"k[0] must be 1, got {self.k[0]}")
        if not self.scales:
            raise ValueError("scales must not be empty")
        if list(self.scales) != sorted(set(self.scales)):
            raise ValueError(f"scales must be strictly increasing, got {self.scales}")
        if self.scales[0] < 1 or self.scales[-1] > self.levels:
            raise ValueError(f"scales must lie in 1..{self.levels}, got {self.scales}")

        minimum = 2 ** (self.levels + 1)
        sizes = list(self.spatial_res) + ([] if self.static_mode else [self.time_res])
        if min(sizes) < minimum:
            raise ValueError(f"resolutions {sizes} too small for levels={self.levels} (need >= {minimum})")

        for axis, (low, high) in enumerate(zip(*self.bbox)):
            if not low < high:
                raise ValueError(f"bbox axis {axis} is empty: {low} >= {high}")
        if not self.t_range[0] < self.t_range[1]:
            raise ValueError(f"t_range {self.t_range} is empty")
        return self

    @property
    def fused_length(self) -> int:
        """Length of the fused feature vector: B * |S|"""
        return self.features * len(self.scales)


class RegWeights(BaseModel):
    """Regularizer weights"""
    model_config = ConfigDict(extra="forbid")

    tv: float = Field(1e-5, ge=0.0)
    sst: float = Field(0.1, ge=0.0)
    ts: float = Field(1e-5, ge=0.0)
    time_smooth: float = Field(0.0, ge=0.0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(2000, ge=1)
    batch_size: int = Field(1024, ge=1)
    lr: float = Field(0.01, gt=0.0)
    warmup_steps: int = Field(512, ge=0)
    reg: RegWeights = Field(default_factory=RegWeights)
    seed: int = 0
    samples_per_ray: int = Field(48, ge=1)
    near: float = Field(2.0, ge=0.0)
    far: float = 6.0
    log_every: int = Field(50, ge=1)
    val_every: int = Field(500, ge=1)
    workers: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_bounds(self) -> "TrainConfig":
        if not self.near < self.far:
            raise ValueError(f"near ({self.near}) must be < far ({self.far})")
        return self


class RenderSettings(BaseModel):
    """Ray-marching settings stored alongside a trained model"""
    model_config = ConfigDict(extra="forbid")

    near: float = 2.0
    far: float = 6.0
    samples_per_ray: int = Field(48, ge=1)
    background: Literal["white", "black"] = "white"

    @model_validator(mode="after")
    def _check_bounds(self) -> "RenderSettings":
        if not self.near < self.far:
            raise ValueError(f"near ({self.near}) must be < far ({self.far})")
        return self

    @property
    def background_rgb(self) -> Tuple[float, float, float]:
        return (1.0, 1.0, 1.0) if self.background == "white" else (0.0, 0.0, 0.0)


class SyntheticSceneSpec(BaseModel):
    """Analytic moving Gaussian blob rendered from a ring of cameras"""
    model_config = ConfigDict(extra="forbid")

    start: Vec3 = (-0.4, 0.0, 0.0)
    end: Vec3 = (0.4, 0.0, 0.0)
    radius: float = Field(0.25, gt=0.0)
    peak_density: float = Field(20.0, ge=0.0)
    color_mode: Literal["constant", "gradient"] = "gradient"
    color: Vec3 = (0.9, 0.3, 0.2)
    color_end: Vec3 = (0.2, 0.4, 0.9)
    gradient_axis: int = Field(0, ge=0, le=2)
    bbox: Tuple[Vec3, Vec3] = DEFAULT_BBOX
    frame_count: int = Field(8, ge=1)
    test_frame_count: int = Field(4, ge=1)
    image_size: int = Field(32, ge=2)
    camera_radius: float = Field(4.0, gt=0.0)
    camera_elevation_deg: float = 20.0
    camera_angle_x: float = Field(0.6, gt=0.0, lt=3.1)
    oracle_samples: int = Field(192, ge=1)
    static: bool = False

    @model_validator(mode="after")
    def _blob_inside_bbox(self) -> "SyntheticSceneSpec":
        low, high = self.bbox
        for name, point in (("start", self.start), ("end", self.end)):
            for axis in range(3):
                if not low[axis] <= point[axis] <= high[axis]:
                    raise ValueError(f"blob {name} {point} lies outside bbox {self.bbox}")
        return self


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["dnerf", "synthetic"] = "synthetic"
    path: Optional[str] = None
    synthetic: SyntheticSceneSpec = Field(default_factory=SyntheticSceneSpec)
    background: Literal["white", "black"] = "white"

    @model_validator(mode="after")
    def _path_for_dnerf(self) -> "DataConfig":
        if self.kind == "dnerf" and not self.path:
            raise ValueError("data.path is required when data.kind is 'dnerf'")
        return self


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str = "runs/latest"


class RunConfig(BaseModel):
    """Complete, self-contained description of one run"""
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    def render_settings(self) -> RenderSettings:
        return RenderSettings(
            near=self.train.near,
            far=self.train.far,
            samples_per_ray=self.train.samples_per_ray,
            background=self.data.background,
        )


def _deep_merge(base: Dict[str, Any], updates: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class RunConfigManager:
    """Loads, overrides and persists run configurations"""

    RESOLVED_NAME = "resolved_config.json"

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize configuration manager

        Args:
            config_path: JSON run config; None uses built-in defaults
        """
        self.config_path = Path(config_path) if config_path else None
        if self.config_path is None:
            self.config = RunConfig()
            logger.info("Using default run config")
        else:
            self.config = self.load_config()
            logger.info(f"Loaded run config from {self.config_path}")

    def load_config(self) -> RunConfig:
        """
        Load and validate the configuration file

        Raises:
            ConfigError: If the file is missing, malformed or fails validation
        """
        try:
            with open(self.config_path, "r") as f:
                raw = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {self.config_path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in config file {self.config_path}: {e}") from e
        return self._validate(raw)

    @staticmethod
    def _validate(raw: Any) -> RunConfig:
        try:
            return RunConfig.model_validate(raw)
        except ValidationError as e:
            raise ConfigError(f"Invalid run config: {e}") from e

    def get_config(self) -> RunConfig:
        return self.config

    def update_config(self, updates: Dict[str, Any]) -> RunConfig:
        """
        Deep-merge `updates` into the current config and revalidate

        Args:
            updates: Nested dict, e.g. {"train": {"seed": 3}}

        Returns:
            RunConfig: The updated configuration
        """
        merged = _deep_merge(self.config.model_dump(mode="json"), updates)
        self.config = self._validate(merged)
        return self.config

    def save_resolved(self, path: Path) -> Path:
        """Write the fully materialized config as JSON; returns the written path"""
        path = Path(path)
        if path.is_dir():
            path = path / self.RESOLVED_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.config.model_dump(mode="json"), f, indent=2)
        logger.info(f"Resolved config written to {path}")
        return path
