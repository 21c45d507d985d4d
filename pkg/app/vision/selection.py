"""
View selection: score occlusion per camera, plan camera switches with
hysteresis, and assemble the single-view output stream.
"""
from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.config import RehomingSettings
from app.errors import InvalidParameter
from app.vision.frames import FrameBundle
from app.vision.rehoming import measure_areas

logger = logging.getLogger(__name__)

Segment = Tuple[int, int, int]


@dataclass(frozen=True)
class SwitchSchedule:
    """Contiguous (start, end, camera) segments covering [0, T)"""
    segments: Tuple[Segment, ...]

    def __post_init__(self):
        segments = tuple((int(s), int(e), int(c)) for s, e, c in self.segments)
        if not segments:
            raise InvalidParameter("A schedule needs at least one segment")
        if segments[0][0] != 0:
            raise InvalidParameter("Schedule must start at frame 0", start=segments[0][0])
        for (s, e, _), nxt in zip(segments, segments[1:] + ((None, None, None),)):
            if e <= s:
                raise InvalidParameter("Empty schedule segment", start=s, end=e)
            if nxt[0] is not None and nxt[0] != e:
                raise InvalidParameter("Schedule segments must be contiguous", end=e, next_start=nxt[0])
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "_starts", [s for s, _, _ in segments])

    @property
    def length(self) -> int:
        return self.segments[-1][1]

    def camera_at(self, t: int) -> int:
        if not 0 <= t < self.length:
            raise IndexError(t)
        return self.segments[bisect.bisect_right(self._starts, t) - 1][2]

    def cameras(self) -> List[int]:
        return [self.camera_at(t) for t in range(self.length)]

    def to_record(self) -> dict:
        return {"segments": [{"start": s, "end": e, "camera": c} for s, e, c in self.segments]}

    @classmethod
    def from_record(cls, record: dict) -> "SwitchSchedule":
        return cls(tuple((seg["start"], seg["end"], seg["camera"]) for seg in record["segments"]))


def scores_from_areas(areas: Sequence[float]) -> np.ndarray:
    """Areas normalised by their maximum; all ones when nothing is visible"""
    arr = np.asarray(areas, dtype=np.float64)
    peak = arr.max() if len(arr) else 0.0
    if peak <= 0:
        return np.ones(len(arr))
    return arr / peak


def occlusion_score(aligned: FrameBundle, settings: Optional[RehomingSettings] = None) -> np.ndarray:
    """Per-camera score in [0, 1] in bundle camera order; higher is less occluded"""
    return scores_from_areas(measure_areas(aligned, settings).areas)


def plan_switches(
    scores: np.ndarray,
    camera_ids: Optional[Sequence[int]] = None,
    min_dwell: int = 15,
    margin: float = 0.8,
) -> SwitchSchedule:
    """
    Greedy hysteresis over a (T, N) score matrix.

    Hold the current camera while its score is at least margin * best;
    otherwise switch to the best camera (lowest id on ties) once the current
    segment and the remaining frames both span min_dwell.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0 or scores.shape[1] == 0:
        raise InvalidParameter("scores must be a non-empty (T, N) matrix", shape=list(scores.shape))
    if min_dwell < 1:
        raise InvalidParameter("min_dwell must be >= 1", min_dwell=min_dwell)
    if not 0 < margin <= 1:
        raise InvalidParameter("margin must lie in (0, 1]", margin=margin)
    camera_ids = list(range(scores.shape[1])) if camera_ids is None else list(camera_ids)
    if len(camera_ids) != scores.shape[1]:
        raise InvalidParameter("One camera id per score column")

    # columns in id order so argmax ties go to the lowest id
    order = np.argsort(camera_ids, kind="stable")
    ids = [camera_ids[i] for i in order]
    scores = scores[:, order]
    total = scores.shape[0]

    current = int(np.argmax(scores[0]))
    start = 0
    segments: List[Segment] = []
    for t in range(1, total):
        best = int(np.argmax(scores[t]))
        if best == current:
            continue
        # margin 1 degenerates to plain argmax
        if margin < 1 and scores[t, current] >= margin * scores[t, best]:
            continue
        if t - start >= min_dwell and total - t >= min_dwell:
            segments.append((start, t, ids[current]))
            current, start = best, t
    segments.append((start, total, ids[current]))
    logger.info("Planned %d segment(s) over %d frames", len(segments), total)
    return SwitchSchedule(tuple(segments))


def round_robin_schedule(total: int, camera_ids: Sequence[int], period: int = 1) -> SwitchSchedule:
    """Cycle through camera_ids every `period` frames"""
    if total < 1 or period < 1 or not camera_ids:
        raise InvalidParameter("total, period and camera_ids must be non-empty", total=total, period=period)
    segments = []
    for i, start in enumerate(range(0, total, period)):
        segments.append((start, min(total, start + period), camera_ids[i % len(camera_ids)]))
    return SwitchSchedule(tuple(segments))


def single_camera_schedule(total: int, camera: int) -> SwitchSchedule:
    return SwitchSchedule(((0, total, camera),))


class SynthesizedVideo(Sequence[np.ndarray]):
    """Output stream z: z_t is the aligned view of the scheduled camera at t"""

    def __init__(self, aligned: Sequence[FrameBundle], schedule: SwitchSchedule):
        if schedule.length != len(aligned):
            raise InvalidParameter(
                "Schedule does not cover the stream", schedule=schedule.length, frames=len(aligned)
            )
        self.aligned = aligned
        self.schedule = schedule

    def __len__(self) -> int:
        return len(self.aligned)

    def __getitem__(self, t):
        if isinstance(t, slice):
            return [self[i] for i in range(*t.indices(len(self)))]
        if t < 0:
            t += len(self)
        return self.aligned[t].image(self.schedule.camera_at(t))


def synthesize(aligned: Sequence[FrameBundle], schedule: SwitchSchedule) -> SynthesizedVideo:
    return SynthesizedVideo(aligned, schedule)
