"""
Synthetic multi-camera rig over a textured plane

Cameras are pinholes looking at the world plane z = 0. The plane carries a
random-gray checker texture with a red disc (the surgical field) at its
centre. Rig moves apply one rigid transform to every camera about the rig
centre; occluders are image-space discs drawn into selected cameras.
Everything is exact: ground-truth homographies come from the poses in
closed form.
"""
from __future__ import annotations

import bisect
import json
import logging
import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
from pydantic import ValidationError, model_validator
from sqlmodel import Field, SQLModel

from app.errors import InvalidParameter, InvalidScenario
from app.vision.alignment import AlignmentState
from app.vision.frames import FrameBundle, FrameSequence, write_video
from app.vision.geometry import Homography

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]


class CameraPose(SQLModel):
    position: Vec3
    look_at: Vec3
    focal_px: float = Field(default=600.0, gt=0)


class PlaneSpec(SQLModel):
    """Square texture of side extent_m centred on the world origin"""
    extent_m: float = Field(default=2.0, gt=0)
    texture_px: int = Field(default=2048, ge=64)
    square_m: float = Field(default=0.06, gt=0, description="Checker square side")
    field_radius_m: float = Field(default=0.15, ge=0, description="Red surgical-field disc radius")
    field_center: Tuple[float, float] = (0.0, 0.0)
    texture_seed: int = Field(default=0, ge=0)


class Occluder(SQLModel):
    """Filled disc in image space, linearly interpolated between (frame, x, y) keyframes"""
    radius_px: float = Field(gt=0)
    color: Tuple[int, int, int] = (40, 110, 70)
    keyframes: List[Tuple[int, float, float]]
    cameras: List[int]

    @model_validator(mode="after")
    def _keyframes_sorted(self) -> "Occluder":
        frames = [k[0] for k in self.keyframes]
        if not frames:
            raise ValueError("an occluder needs at least one keyframe")
        if frames != sorted(frames):
            raise ValueError("occluder keyframes must be sorted by frame")
        return self

    def center_at(self, t: int) -> Tuple[float, float]:
        frames = [k[0] for k in self.keyframes]
        x = float(np.interp(t, frames, [k[1] for k in self.keyframes]))
        y = float(np.interp(t, frames, [k[2] for k in self.keyframes]))
        return x, y


class RigMove(SQLModel):
    """Rotation (rotation vector, degrees) about the rig centre, then translation (metres)"""
    frame: int = Field(ge=0)
    rotation_deg: Vec3 = (0.0, 0.0, 0.0)
    translation: Vec3 = (0.0, 0.0, 0.0)


class Scenario(SQLModel):
    name: str = "custom"
    cameras: List[CameraPose]
    plane: PlaneSpec = Field(default_factory=PlaneSpec)
    occluders: List[Occluder] = Field(default_factory=list)
    rig_moves: List[RigMove] = Field(default_factory=list)
    duration: int = Field(default=1800, ge=1)
    fps: float = Field(default=30.0, gt=0)
    width: int = Field(default=640, ge=32)
    height: int = Field(default=480, ge=32)
    noise_sigma: float = Field(default=0.0, ge=0, description="Per-frame luminance noise")

    @model_validator(mode="after")
    def _consistent(self) -> "Scenario":
        if not self.cameras:
            raise ValueError("a scenario needs at least one camera")
        frames = [m.frame for m in self.rig_moves]
        if frames != sorted(frames):
            raise ValueError("rig_moves must be sorted by frame")
        for occluder in self.occluders:
            for cam in occluder.cameras:
                if not 0 <= cam < len(self.cameras):
                    raise ValueError(f"occluder camera {cam} out of range")
        return self


@dataclass(frozen=True)
class CameraModel:
    """World-to-camera rotation (rows are the camera axes), centre and focal length"""
    rotation: np.ndarray
    center: np.ndarray
    focal: float
    width: int
    height: int

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.focal, 0.0, self.width / 2.0 - 0.5], [0.0, self.focal, self.height / 2.0 - 0.5], [0.0, 0.0, 1.0]]
        )

    def plane_to_image(self) -> np.ndarray:
        """3x3 map from plane coordinates (X, Y, 1) on z = 0 to pixels"""
        t = -self.rotation @ self.center
        extrinsic = np.column_stack([self.rotation[:, 0], self.rotation[:, 1], t])
        return self.intrinsics @ extrinsic

    def moved(self, rotation: np.ndarray, pivot: np.ndarray, translation: np.ndarray) -> "CameraModel":
        center = rotation @ (self.center - pivot) + pivot + translation
        return CameraModel(self.rotation @ rotation.T, center, self.focal, self.width, self.height)


def _camera_model(pose: CameraPose, width: int, height: int) -> CameraModel:
    center = np.asarray(pose.position, dtype=np.float64)
    forward = np.asarray(pose.look_at, dtype=np.float64) - center
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise InvalidScenario("Camera position equals its look-at point", position=list(pose.position))
    z = forward / norm
    for right in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        x = right - (right @ z) * z
        if np.linalg.norm(x) > 1e-6:
            break
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return CameraModel(np.vstack([x, y, z]), center, float(pose.focal_px), width, height)


def _check_pose(camera: CameraModel, index: int, epoch_start: int) -> None:
    if camera.center[2] <= 0:
        raise InvalidScenario("Camera is not above the plane", camera=index, frame=epoch_start)
    k_inv = np.linalg.inv(camera.intrinsics)
    w, h = camera.width - 1, camera.height - 1
    for px in ((0, 0), (w, 0), (0, h), (w, h)):
        ray = camera.rotation.T @ (k_inv @ np.array([px[0], px[1], 1.0]))
        if ray[2] >= 0:
            raise InvalidScenario("Image corner ray misses the plane", camera=index, frame=epoch_start, corner=list(px))


def pose_epochs(scenario: Scenario) -> Tuple[List[int], List[List[CameraModel]]]:
    """Start frame of every pose epoch and the camera models valid during it"""
    cameras = [_camera_model(p, scenario.width, scenario.height) for p in scenario.cameras]
    starts, epochs = [0], [cameras]
    for move in scenario.rig_moves:
        rotation, _ = cv2.Rodrigues(np.deg2rad(np.asarray(move.rotation_deg, dtype=np.float64)).reshape(3, 1))
        pivot = np.mean([c.center for c in cameras], axis=0)
        cameras = [c.moved(rotation, pivot, np.asarray(move.translation, dtype=np.float64)) for c in cameras]
        if move.frame == starts[-1]:
            epochs[-1] = cameras
        else:
            starts.append(move.frame)
            epochs.append(cameras)
    for start, models in zip(starts, epochs):
        for index, camera in enumerate(models):
            _check_pose(camera, index, start)
    return starts, epochs


@lru_cache(maxsize=4)
def _texture_pyramid(plane_json: str) -> Tuple[np.ndarray, ...]:
    plane = PlaneSpec.model_validate_json(plane_json)
    rng = np.random.default_rng(plane.texture_seed)
    size = plane.texture_px
    texel = plane.extent_m / size

    squares = int(math.ceil(plane.extent_m / plane.square_m))
    levels = rng.integers(45, 211, size=(squares, squares)).astype(np.float32)
    index = np.minimum((np.arange(size) * texel / plane.square_m).astype(int), squares - 1)
    gray = levels[index][:, index]

    blobs = cv2.resize(rng.normal(0.0, 18.0, (24, 24)).astype(np.float32), (size, size), interpolation=cv2.INTER_CUBIC)
    grain = cv2.GaussianBlur(rng.normal(0.0, 60.0, (size, size)).astype(np.float32), (0, 0), 2.5)
    gray = cv2.GaussianBlur(gray + blobs + grain, (0, 0), 1.0)
    gray = np.clip(gray, 20, 235)

    rgb = np.repeat(gray[..., None], 3, axis=2)
    if plane.field_radius_m > 0:
        coords = -plane.extent_m / 2.0 + (np.arange(size) + 0.5) * texel
        dx = coords[None, :] - plane.field_center[0]
        dy = coords[:, None] - plane.field_center[1]
        disc = dx * dx + dy * dy <= plane.field_radius_m ** 2
        rgb[disc, 0] = 90.0 + 0.65 * gray[disc]
        rgb[disc, 1] = 0.25 * gray[disc]
        rgb[disc, 2] = 0.25 * gray[disc]

    pyramid = [np.clip(np.round(rgb), 0, 255).astype(np.uint8)]
    while min(pyramid[-1].shape[:2]) > 64:
        pyramid.append(cv2.pyrDown(pyramid[-1]))
    return tuple(pyramid)


def _texture_to_plane(plane: PlaneSpec, level: int) -> np.ndarray:
    """Texture pixel (u, v) at pyramid level -> plane coordinates"""
    texel = plane.extent_m / plane.texture_px
    scale = texel * (2 ** level)
    offset = -plane.extent_m / 2.0 + texel / 2.0
    return np.array([[scale, 0.0, offset], [0.0, scale, offset], [0.0, 0.0, 1.0]])


def _disc_mask(width: int, height: int, cx: float, cy: float, radius: float) -> np.ndarray:
    ys, xs = np.ogrid[:height, :width]
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius


class RenderedSequence(FrameSequence):
    """
    Lazily rendered frames of a scenario.

    The occluder-free view of every camera is cached for the current pose
    epoch; occluders and noise are applied per frame.
    """

    def __init__(self, scenario: Scenario, seed: int = 0):
        self.scenario = scenario
        self.seed = seed
        self.epoch_starts, self.epochs = pose_epochs(scenario)
        self.camera_ids = tuple(range(len(scenario.cameras)))
        self._pyramid = _texture_pyramid(scenario.plane.model_dump_json())
        self._lock = threading.Lock()
        self._cache_epoch: Optional[int] = None
        self._cache: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return self.scenario.duration

    def epoch_of(self, t: int) -> int:
        return bisect.bisect_right(self.epoch_starts, t) - 1

    def _render_base(self, camera: CameraModel) -> np.ndarray:
        texel = self.scenario.plane.extent_m / self.scenario.plane.texture_px
        texels_per_pixel = camera.center[2] / camera.focal / texel
        level = int(np.clip(math.floor(math.log2(max(texels_per_pixel, 1.0))), 0, len(self._pyramid) - 1))
        m = camera.plane_to_image() @ _texture_to_plane(self.scenario.plane, level)
        return cv2.warpPerspective(
            self._pyramid[level],
            m,
            (camera.width, camera.height),
            flags=cv2.INTER_LINEAR,
            borderMode=cv2.BORDER_CONSTANT,
            borderValue=0,
        )

    def base_view(self, epoch: int, cam: int) -> np.ndarray:
        with self._lock:
            if self._cache_epoch != epoch:
                self._cache = {}
                self._cache_epoch = epoch
            if cam not in self._cache:
                self._cache[cam] = self._render_base(self.epochs[epoch][cam])
            return self._cache[cam]

    def view(self, t: int, cam: int) -> np.ndarray:
        if not 0 <= t < len(self):
            raise IndexError(t)
        img = self.base_view(self.epoch_of(t), cam).copy()
        for occluder in self.scenario.occluders:
            if cam in occluder.cameras:
                cx, cy = occluder.center_at(t)
                img[_disc_mask(self.scenario.width, self.scenario.height, cx, cy, occluder.radius_px)] = occluder.color
        if self.scenario.noise_sigma > 0:
            rng = np.random.default_rng([self.seed, t, cam])
            noise = rng.normal(0.0, self.scenario.noise_sigma, img.shape[:2])
            img = np.clip(np.round(img + noise[..., None]), 0, 255).astype(np.uint8)
        return img

    def bundle(self, t: int) -> FrameBundle:
        return FrameBundle(t=t, images=tuple(self.view(t, c) for c in self.camera_ids), camera_ids=self.camera_ids)

    def camera_video(self, cam: int) -> "CameraVideo":
        return CameraVideo(self, cam)


class CameraVideo(Sequence[np.ndarray]):
    """One camera's stream of a rendered scenario"""

    def __init__(self, frames: RenderedSequence, cam: int):
        self.frames = frames
        self.cam = cam

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, t):
        if isinstance(t, slice):
            return [self[i] for i in range(*t.indices(len(self)))]
        return self.frames.view(t, self.cam)


class GroundTruth:
    """Exact homographies to camera 0, rig-move frames and occlusion fractions"""

    def __init__(self, scenario: Scenario, epoch_starts: List[int], epochs: List[List[CameraModel]]):
        self.scenario = scenario
        self.epoch_starts = epoch_starts
        self.move_frames = [m.frame for m in scenario.rig_moves]
        self._plane_maps = [[c.plane_to_image() for c in cams] for cams in epochs]
        self._field_masks: Dict[Tuple[int, int], np.ndarray] = {}

    def epoch_of(self, t: int) -> int:
        return bisect.bisect_right(self.epoch_starts, t) - 1

    def homography(self, t: int, cam: int) -> Homography:
        """Plane-induced homography camera cam -> camera 0 at frame t"""
        if cam == 0:
            return Homography.identity()
        maps = self._plane_maps[self.epoch_of(t)]
        return Homography(maps[0] @ np.linalg.inv(maps[cam]))

    def homographies(self, t: int) -> Dict[int, Homography]:
        return {cam: self.homography(t, cam) for cam in range(len(self.scenario.cameras))}

    def alignment_state(self, t: int) -> AlignmentState:
        """The exact alignment into camera 0 valid at frame t"""
        start = self.epoch_starts[self.epoch_of(t)]
        return AlignmentState(reference_camera=0, maps=self.homographies(t), valid_from=start)

    def field_mask(self, t: int, cam: int) -> np.ndarray:
        """Pixels of camera cam whose plane point lies inside the surgical field"""
        key = (self.epoch_of(t), cam)
        if key not in self._field_masks:
            g_inv = np.linalg.inv(self._plane_maps[key[0]][cam])
            w, h = self.scenario.width, self.scenario.height
            xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
            pts = g_inv @ np.stack([xs.ravel(), ys.ravel(), np.ones(w * h)])
            px, py = pts[0] / pts[2], pts[1] / pts[2]
            cx, cy = self.scenario.plane.field_center
            inside = (px - cx) ** 2 + (py - cy) ** 2 <= self.scenario.plane.field_radius_m ** 2
            self._field_masks[key] = inside.reshape(h, w)
        return self._field_masks[key]

    def occluder_mask(self, t: int, cam: int) -> np.ndarray:
        w, h = self.scenario.width, self.scenario.height
        mask = np.zeros((h, w), dtype=bool)
        for occluder in self.scenario.occluders:
            if cam in occluder.cameras:
                cx, cy = occluder.center_at(t)
                mask |= _disc_mask(w, h, cx, cy, occluder.radius_px)
        return mask

    def occluded_fraction(self, t: int, cam: int) -> float:
        """Share of the image covered by occluders"""
        if not any(cam in o.cameras for o in self.scenario.occluders):
            return 0.0
        return float(self.occluder_mask(t, cam).mean())

    def field_occluded_fraction(self, t: int, cam: int) -> float:
        """Share of the visible surgical field covered by occluders"""
        if not any(cam in o.cameras for o in self.scenario.occluders):
            return 0.0
        field = self.field_mask(t, cam)
        total = int(field.sum())
        if total == 0:
            return 0.0
        return float((field & self.occluder_mask(t, cam)).sum() / total)

    def to_record(self) -> dict:
        cams = range(len(self.scenario.cameras))
        return {
            "scenario": self.scenario.name,
            "move_frames": self.move_frames,
            "homographies": [
                {"valid_from": start, "maps": {str(c): self.homography(start, c).to_values() for c in cams}}
                for start in self.epoch_starts
            ],
            "occluded_fraction": [
                [round(self.occluded_fraction(t, c), 6) for c in cams] for t in range(self.scenario.duration)
            ],
            "field_occluded_fraction": [
                [round(self.field_occluded_fraction(t, c), 6) for c in cams] for t in range(self.scenario.duration)
            ],
        }


def render(scenario: Scenario, seed: int = 0) -> Tuple[RenderedSequence, GroundTruth]:
    """Frame streams and ground truth of a scenario; deterministic given the seed"""
    frames = RenderedSequence(scenario, seed)
    truth = GroundTruth(scenario, frames.epoch_starts, frames.epochs)
    logger.info(
        "Scenario %s: %d cameras, %d frames, %d pose epoch(s)",
        scenario.name,
        len(scenario.cameras),
        scenario.duration,
        len(frames.epochs),
    )
    return frames, truth


def pentagon_rig(
    count: int = 5, radius: float = 0.04, height: float = 1.0, focal: float = 600.0
) -> List[CameraPose]:
    """Cameras on a horizontal circle, all looking straight down"""
    poses = []
    for k in range(count):
        angle = 2.0 * math.pi * k / count
        x, y = radius * math.cos(angle), radius * math.sin(angle)
        poses.append(CameraPose(position=(x, y, height), look_at=(x, y, 0.0), focal_px=focal))
    return poses


def builtin_scenarios() -> Dict[str, Scenario]:
    """Named reference scenarios"""
    static = Scenario(name="static", cameras=pentagon_rig(), noise_sigma=1.0)
    one_move = Scenario(
        name="one-move",
        cameras=pentagon_rig(),
        rig_moves=[RigMove(frame=900, rotation_deg=(3.0, -2.0, 0.0), translation=(0.05, 0.03, -0.2))],
        noise_sigma=1.0,
    )
    occluded = Scenario(
        name="occluded-then-clear",
        cameras=pentagon_rig(),
        occluders=[
            Occluder(
                radius_px=80.0,
                keyframes=[(0, 319.5, 239.5), (1190, 319.5, 239.5), (1200, -200.0, 239.5)],
                cameras=[1, 3],
            )
        ],
        noise_sigma=1.0,
    )
    # 20 simulated minutes at 2 fps, moves 10 minutes apart
    two_moves = Scenario(
        name="two-moves-20min",
        cameras=pentagon_rig(focal=300.0),
        rig_moves=[
            RigMove(frame=600, rotation_deg=(2.0, 1.0, 0.0), translation=(0.03, 0.0, -0.15)),
            RigMove(frame=1800, rotation_deg=(-2.0, 0.0, 1.0), translation=(-0.02, 0.02, 0.15)),
        ],
        duration=2400,
        fps=2.0,
        width=320,
        height=240,
        noise_sigma=1.0,
    )
    return {s.name: s for s in (static, one_move, occluded, two_moves)}


def builtin_scenario(name: str) -> Scenario:
    scenarios = builtin_scenarios()
    if name not in scenarios:
        raise InvalidScenario("Unknown built-in scenario", name=name, available=sorted(scenarios))
    return scenarios[name]


def scaled(scenario: Scenario, size: float = 1.0, time: float = 1.0) -> Scenario:
    """
    Copy of a scenario with image size and frame timeline scaled.

    Focal lengths and occluders scale with the image so the field of view
    is unchanged; move and keyframe frames scale with the timeline.
    """
    if size <= 0 or time <= 0:
        raise InvalidParameter("Scale factors must be positive", size=size, time=time)
    width, height = int(round(scenario.width * size)), int(round(scenario.height * size))

    def px(v: float, full: int, new: int) -> float:
        # keep pixel centres consistent with cx = W/2 - 0.5
        return (v + 0.5) * new / full - 0.5

    cameras = [c.model_copy(update={"focal_px": c.focal_px * size}) for c in scenario.cameras]
    occluders = [
        o.model_copy(
            update={
                "radius_px": o.radius_px * size,
                "keyframes": [
                    (int(round(f * time)), px(x, scenario.width, width), px(y, scenario.height, height))
                    for f, x, y in o.keyframes
                ],
            }
        )
        for o in scenario.occluders
    ]
    moves = [m.model_copy(update={"frame": int(round(m.frame * time))}) for m in scenario.rig_moves]
    return scenario.model_copy(
        update={
            "cameras": cameras,
            "occluders": occluders,
            "rig_moves": moves,
            "width": width,
            "height": height,
            "duration": max(1, int(round(scenario.duration * time))),
        }
    )


def load_scenario(source: Union[str, Path]) -> Scenario:
    """Scenario from a JSON file or a built-in name"""
    path = Path(source)
    if path.suffix == ".json" or path.is_file():
        try:
            return Scenario.model_validate_json(path.read_text())
        except ValidationError as e:
            raise InvalidScenario(
                "Scenario failed validation",
                path=str(path),
                errors=[{"loc": list(err["loc"]), "msg": err["msg"]} for err in e.errors()],
            )
        except OSError as e:
            raise InvalidScenario(f"Cannot read scenario: {e}", path=str(path))
    return builtin_scenario(str(source))


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(scenario.model_dump_json(indent=2))


def write_ground_truth(truth: GroundTruth, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(truth.to_record()))


def simulate(scenario: Scenario, out_dir: Union[str, Path], seed: int = 0) -> Tuple[RenderedSequence, GroundTruth]:
    """Render to `<out>/cam<k>/frame_%06d.png` plus ground_truth.json and scenario.json"""
    out_dir = Path(out_dir)
    frames, truth = render(scenario, seed)
    # per camera, so one-camera scenarios need no bundle
    for cam in frames.camera_ids:
        write_video(out_dir / f"cam{cam}", frames.camera_video(cam))
    write_ground_truth(truth, out_dir / "ground_truth.json")
    save_scenario(scenario, out_dir / "scenario.json")
    return frames, truth
