"""
Frame bundles, lazy frame sequences and PNG frame I/O

On disk a multi-camera stream is `<root>/cam<k>/frame_%06d.png` (8-bit RGB);
a single-view stream is `<root>/frame_%06d.png`.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import cv2
import numpy as np

from app.errors import InputMismatch, InvalidParameter

logger = logging.getLogger(__name__)

FRAME_PATTERN = "frame_{:06d}.png"
_FRAME_RE = re.compile(r"^frame_(\d{6})\.png$")
_CAMERA_RE = re.compile(r"^cam(\d+)$")


@dataclass(frozen=True)
class FrameBundle:
    """One time index with one RGB image per camera"""
    t: int
    images: Tuple[np.ndarray, ...]
    camera_ids: Tuple[int, ...]

    def __post_init__(self):
        images = tuple(self.images)
        camera_ids = tuple(int(c) for c in self.camera_ids)
        if len(images) < 2:
            raise InvalidParameter("A bundle needs at least 2 cameras", t=self.t)
        if len(images) != len(camera_ids):
            raise InvalidParameter("One camera id per image", t=self.t)
        if len(set(img.shape for img in images)) != 1:
            raise InputMismatch("All images in a bundle must share dimensions", frame=self.t)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "camera_ids", camera_ids)

    @property
    def size(self) -> Tuple[int, int]:
        """(width, height)"""
        h, w = self.images[0].shape[:2]
        return w, h

    def image(self, camera_id: int) -> np.ndarray:
        return self.images[self.camera_ids.index(camera_id)]


class FrameSequence(Sequence[FrameBundle]):
    """Random-access stream of bundles produced on demand"""

    camera_ids: Tuple[int, ...] = ()

    def bundle(self, t: int) -> FrameBundle:
        raise NotImplementedError

    def frame_id(self, i: int) -> int:
        """Absolute frame index of position i, without producing the bundle"""
        return i

    def __getitem__(self, t):
        if isinstance(t, slice):
            return [self.bundle(i) for i in range(*t.indices(len(self)))]
        if t < 0:
            t += len(self)
        if not 0 <= t < len(self):
            raise IndexError(t)
        return self.bundle(t)

    @property
    def frame_size(self) -> Tuple[int, int]:
        return self.bundle(0).size


class BundleList(FrameSequence):
    """In-memory sequence (tests, small clips)"""

    def __init__(self, bundles: Iterable[FrameBundle]):
        self._bundles = list(bundles)
        self.camera_ids = self._bundles[0].camera_ids if self._bundles else ()

    def __len__(self) -> int:
        return len(self._bundles)

    def bundle(self, t: int) -> FrameBundle:
        return self._bundles[t]

    def frame_id(self, i: int) -> int:
        return self._bundles[i].t


def read_image(path: Union[str, Path]) -> np.ndarray:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise InputMismatch("Cannot read frame", path=str(path))
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def write_image(path: Union[str, Path], img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = img if img.ndim == 2 else cv2.cvtColor(img, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), out):
        raise InputMismatch("Cannot write frame", path=str(path))


def _frame_files(directory: Path) -> List[Path]:
    files = sorted(p for p in directory.iterdir() if _FRAME_RE.match(p.name))
    for expected, path in enumerate(files):
        if int(_FRAME_RE.match(path.name).group(1)) != expected:
            raise InputMismatch("Frame numbering has gaps", directory=str(directory), missing=expected)
    return files


class FrameDirectorySequence(FrameSequence):
    """Multi-camera stream read lazily from `<root>/cam<k>/frame_%06d.png`"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        if not self.root.is_dir():
            raise InputMismatch("Input directory does not exist", path=str(self.root))
        cams = sorted(
            (int(m.group(1)), p) for p in self.root.iterdir() if p.is_dir() and (m := _CAMERA_RE.match(p.name))
        )
        if len(cams) < 2:
            raise InputMismatch("Need at least two cam<k> directories", path=str(self.root), cameras=len(cams))
        self.camera_ids = tuple(k for k, _ in cams)
        self._files = [_frame_files(p) for _, p in cams]
        lengths = {len(f) for f in self._files}
        if len(lengths) != 1:
            raise InputMismatch(
                "Cameras have unequal frame counts",
                counts={k: len(f) for k, f in zip(self.camera_ids, self._files)},
            )
        self._length = lengths.pop()
        if self._length == 0:
            raise InputMismatch("Input has no frames", path=str(self.root))
        sizes = {read_image(f[0]).shape for f in self._files}
        if len(sizes) != 1:
            raise InputMismatch("Cameras have unequal frame sizes", sizes=sorted(str(s) for s in sizes))

    def __len__(self) -> int:
        return self._length

    def bundle(self, t: int) -> FrameBundle:
        images = tuple(read_image(files[t]) for files in self._files)
        if len({img.shape for img in images}) != 1:
            raise InputMismatch("Frame sizes differ between cameras", frame=t)
        return FrameBundle(t=t, images=images, camera_ids=self.camera_ids)


class ImageDirectory(Sequence[np.ndarray]):
    """Single-view video read lazily from `<root>/frame_%06d.png`"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        if not self.root.is_dir():
            raise InputMismatch("Input directory does not exist", path=str(self.root))
        self._files = _frame_files(self.root)

    def __len__(self) -> int:
        return len(self._files)

    def __getitem__(self, t):
        if isinstance(t, slice):
            return [read_image(f) for f in self._files[t]]
        return read_image(self._files[t])


def write_sequence(root: Union[str, Path], frames: Sequence[FrameBundle]) -> int:
    """Write every bundle as per-camera frame files; returns frames written"""
    root = Path(root)
    count = 0
    cameras = 0
    for t in range(len(frames)):
        bundle = frames[t]
        for cam, img in zip(bundle.camera_ids, bundle.images):
            write_image(root / f"cam{cam}" / FRAME_PATTERN.format(t), img)
        cameras = len(bundle.camera_ids)
        count += 1
    logger.info("Wrote %d frames x %d cameras to %s", count, cameras, root)
    return count


def write_video(root: Union[str, Path], frames: Iterable[np.ndarray]) -> int:
    root = Path(root)
    count = 0
    for t, img in enumerate(frames):
        write_image(root / FRAME_PATTERN.format(t), img)
        count += 1
    logger.info("Wrote %d frames to %s", count, root)
    return count


def frame_id(frames: Sequence[FrameBundle], i: int) -> int:
    """Absolute frame index of position i for any bundle sequence"""
    if isinstance(frames, FrameSequence):
        return frames.frame_id(i)
    return frames[i].t
