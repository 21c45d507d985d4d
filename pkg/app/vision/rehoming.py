"""
Re-homing: find the frame after a movement where every camera again sees the
surgical field equally well, so homographies can be re-estimated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from app.config import RehomingSettings
from app.errors import AllZeroAreas, InvalidParameter, NoRehomingFound
from app.vision.frames import FrameBundle
from app.vision.workers import parallel_map

logger = logging.getLogger(__name__)

DEFAULT_HUE_RANGES: Tuple[Tuple[int, int], ...] = ((0, 30), (150, 179))


@dataclass(frozen=True)
class AreaMeasurement:
    t: int
    areas: Tuple[int, ...]


@dataclass(frozen=True)
class RehomingSignal:
    t: int
    S: Optional[float]
    areas: Tuple[int, ...] = ()

    def to_record(self) -> dict:
        return {"t": self.t, "S": self.S, "areas": list(self.areas)}


def field_mask(
    img: np.ndarray,
    hue_ranges: Sequence[Tuple[int, int]] = DEFAULT_HUE_RANGES,
    min_saturation: int = 20,
    min_value: int = 20,
) -> np.ndarray:
    """Boolean mask of pixels whose hue (0-179 scale) falls in any range"""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise InvalidParameter("Expected an 8-bit RGB image", shape=list(img.shape), dtype=str(img.dtype))
    hsv = cv2.cvtColor(img, cv2.COLOR_RGB2HSV)
    hue, sat, val = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    in_range = np.zeros(hue.shape, dtype=bool)
    for low, high in hue_ranges:
        in_range |= (hue >= low) & (hue <= high)
    return in_range & (sat >= min_saturation) & (val >= min_value)


def surgical_field_area(
    img: np.ndarray,
    hue_ranges: Sequence[Tuple[int, int]] = DEFAULT_HUE_RANGES,
    min_saturation: int = 20,
    min_value: int = 20,
) -> int:
    return int(np.count_nonzero(field_mask(img, hue_ranges, min_saturation, min_value)))


def measure_areas(
    bundle: FrameBundle, settings: Optional[RehomingSettings] = None, workers: Optional[int] = 1
) -> AreaMeasurement:
    settings = settings or RehomingSettings()
    areas = parallel_map(
        lambda img: surgical_field_area(img, settings.hue_ranges, settings.min_saturation, settings.min_value),
        bundle.images,
        workers,
    )
    return AreaMeasurement(t=bundle.t, areas=tuple(areas))


def agreement_from_areas(areas: Sequence[float]) -> float:
    """(max - min) / mean of per-camera field areas"""
    arr = np.asarray(areas, dtype=np.float64)
    if len(arr) < 2:
        raise InvalidParameter("Need at least two cameras", cameras=len(arr))
    if np.any(arr < 0):
        raise InvalidParameter("Areas must be non-negative")
    mean = arr.mean()
    if mean == 0:
        raise AllZeroAreas("No surgical field visible in any camera")
    return float((arr.max() - arr.min()) / mean)


def area_agreement(bundle: FrameBundle, settings: Optional[RehomingSettings] = None) -> RehomingSignal:
    """Area-agreement S on the raw views of one bundle"""
    measurement = measure_areas(bundle, settings)
    try:
        s = agreement_from_areas(measurement.areas)
    except AllZeroAreas as e:
        raise e.with_context(frame=bundle.t)
    return RehomingSignal(t=bundle.t, S=s, areas=measurement.areas)


def scan_rehoming(
    stream: Sequence[FrameBundle],
    from_t: int,
    settings: Optional[RehomingSettings] = None,
) -> Tuple[Optional[int], List[RehomingSignal]]:
    """
    Evaluate S every cadence frames from from_t. Returns the first evaluation
    frame of a run of `persistence` consecutive S < s_threshold (or None)
    together with every signal computed.

    Frames with no visible field anywhere count as not agreeing.
    """
    settings = settings or RehomingSettings()
    if not 0 <= from_t < len(stream):
        raise InvalidParameter("from_t outside stream", from_t=from_t, length=len(stream))

    signals: List[RehomingSignal] = []
    run_start: Optional[int] = None
    run_length = 0
    for t in range(from_t, len(stream), settings.cadence):
        measurement = measure_areas(stream[t], settings)
        try:
            s = agreement_from_areas(measurement.areas)
        except AllZeroAreas:
            s = None
        signal = RehomingSignal(t=measurement.t, S=s, areas=measurement.areas)
        signals.append(signal)
        logger.debug("S at frame %d: %s", signal.t, signal.S)

        if signal.S is not None and signal.S < settings.s_threshold:
            if run_length == 0:
                run_start = signal.t
            run_length += 1
            if run_length >= settings.persistence:
                logger.info("Re-homing time found at frame %d", run_start)
                return run_start, signals
        else:
            run_start, run_length = None, 0
    return None, signals


def detect_rehoming_time(
    stream: Sequence[FrameBundle],
    from_t: int,
    settings: Optional[RehomingSettings] = None,
) -> int:
    """Re-homing frame t_h; raises NoRehomingFound if the stream ends first"""
    t_h, signals = scan_rehoming(stream, from_t, settings)
    if t_h is None:
        raise NoRehomingFound("Stream ended before the views agreed", from_t=from_t, evaluations=len(signals))
    return t_h
