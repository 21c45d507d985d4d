"""
Configuration: environment settings and the validated pipeline configuration
"""
import json
import logging
import os
from pathlib import Path
from typing import List, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import ValidationError, field_validator, model_validator
from sqlmodel import Field, SQLModel

from app.errors import InvalidConfig

load_dotenv()

# Environment settings
DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./singleview.db")
LOG_LEVEL = os.getenv("SVV_LOG_LEVEL", "INFO")
DATA_DIR = Path(os.getenv("SVV_DATA_DIR", "."))

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def worker_count() -> int:
    """Worker count for frame-level fan-out, read from SVV_WORKERS"""
    raw = os.getenv("SVV_WORKERS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logging.getLogger(__name__).warning("Ignoring non-integer SVV_WORKERS=%r", raw)
    return min(4, os.cpu_count() or 1)


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(level=(level or LOG_LEVEL).upper(), format=LOG_FORMAT)


def data_path(path: Union[str, Path]) -> Path:
    """Service paths are resolved against SVV_DATA_DIR unless absolute"""
    path = Path(path)
    return path if path.is_absolute() else DATA_DIR / path


class FeatureSettings(SQLModel):
    """Keypoint detector/descriptor and matcher parameters"""
    max_keypoints: int = Field(default=2000, ge=1, description="Strongest-response keypoints kept per image")
    n_octave_layers: int = Field(default=3, ge=1, description="Scales sampled per octave")
    contrast_threshold: float = Field(default=0.04, gt=0, description="Extremum contrast floor")
    edge_threshold: float = Field(default=10.0, gt=0, description="Principal-curvature edge rejection")
    sigma: float = Field(default=1.6, gt=0, description="Base Gaussian blur")
    ratio: float = Field(default=0.75, gt=0, lt=1, description="Nearest/second-nearest distance ratio")


class RansacSettings(SQLModel):
    inlier_tol: float = Field(default=3.0, gt=0, description="Inlier reprojection tolerance (px)")
    confidence: float = Field(default=0.995, gt=0, lt=1)
    max_iters: int = Field(default=2000, ge=1)
    seed: int = Field(default=0, ge=0)


class AlignmentSettings(SQLModel):
    reference_camera: int = Field(default=0, ge=0)
    target_count: int = Field(default=200, ge=4, description="Accumulated pairs per camera")
    max_frames: int = Field(default=300, ge=1, description="Frames consumed at most while accumulating")


class MovementSettings(SQLModel):
    """Degree-of-misalignment scan parameters"""
    min_matches: int = Field(default=10, ge=1)
    mad_k: float = Field(default=3.0, gt=0)
    window: int = Field(default=31, ge=1, description="Smoothing window (odd, frames)")
    window_minutes: float = Field(default=10.0, gt=0, description="Clustering window length")
    runs: int = Field(default=5, ge=1, description="Repeated detections (odd)")
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    sample_fraction: float = Field(default=0.8, gt=0, le=1, description="Matched pairs drawn per run")
    stride: int = Field(default=1, ge=1)
    rehoming_delay: Optional[int] = Field(default=None, ge=0, description="Frames between t_c and the re-homing scan")

    @field_validator("window", "runs")
    @classmethod
    def _must_be_odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("must be odd")
        return value

    @model_validator(mode="after")
    def _enough_seeds(self) -> "MovementSettings":
        if len(self.seeds) < self.runs:
            raise ValueError(f"need at least {self.runs} seeds, got {len(self.seeds)}")
        return self

    @property
    def settle_frames(self) -> int:
        if self.rehoming_delay is not None:
            return self.rehoming_delay
        return self.window // 2 + 1


class RehomingSettings(SQLModel):
    hue_ranges: List[Tuple[int, int]] = Field(default_factory=lambda: [(0, 30), (150, 179)])
    min_saturation: int = Field(default=20, ge=0, le=255)
    min_value: int = Field(default=20, ge=0, le=255)
    cadence: int = Field(default=30, ge=1)
    s_threshold: float = Field(default=0.5, gt=0)
    persistence: int = Field(default=3, ge=1)

    @field_validator("hue_ranges")
    @classmethod
    def _hue_bounds(cls, ranges: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
        for low, high in ranges:
            if not (0 <= low <= high <= 179):
                raise ValueError(f"hue range ({low}, {high}) must satisfy 0 <= low <= high <= 179")
        return ranges


class SelectionSettings(SQLModel):
    min_dwell: int = Field(default=15, ge=1)
    margin: float = Field(default=0.8, gt=0, le=1)


class MetricsSettings(SQLModel):
    psnr_cap: float = Field(default=99.0, gt=0)
    search_radius: float = Field(default=50.0, gt=0)
    max_keypoints: int = Field(default=500, ge=1)
    ratio: float = Field(default=0.8, gt=0, lt=1)


class PipelineConfig(SQLModel):
    """
    Full pipeline configuration

    Every module parameter with its documented default. Loaded from JSON.
    """
    camera_count: int = Field(default=5, ge=2)
    fps: float = Field(default=30.0, gt=0)
    features: FeatureSettings = Field(default_factory=FeatureSettings)
    ransac: RansacSettings = Field(default_factory=RansacSettings)
    alignment: AlignmentSettings = Field(default_factory=AlignmentSettings)
    movement: MovementSettings = Field(default_factory=MovementSettings)
    rehoming: RehomingSettings = Field(default_factory=RehomingSettings)
    selection: SelectionSettings = Field(default_factory=SelectionSettings)
    metrics: MetricsSettings = Field(default_factory=MetricsSettings)
    write_aligned: bool = Field(default=False, description="Also write aligned views y")

    @model_validator(mode="after")
    def _reference_in_range(self) -> "PipelineConfig":
        if self.alignment.reference_camera >= self.camera_count:
            raise ValueError("alignment.reference_camera must be below camera_count")
        return self

    @property
    def window_frames(self) -> int:
        """Clustering window converted to frames"""
        return max(1, int(round(self.movement.window_minutes * 60.0 * self.fps)))


def load_config(source: Union[str, Path, dict, None]) -> PipelineConfig:
    """Load and validate a PipelineConfig from a JSON file, a dict, or defaults"""
    if source is None:
        return PipelineConfig()
    try:
        if isinstance(source, dict):
            return PipelineConfig.model_validate(source)
        text = Path(source).read_text()
        return PipelineConfig.model_validate(json.loads(text))
    except ValidationError as e:
        raise InvalidConfig(
            "Configuration failed validation",
            errors=[{"loc": list(err["loc"]), "msg": err["msg"]} for err in e.errors()],
        )
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidConfig(f"Cannot read configuration: {e}", path=str(source))
