"""
Camera-movement detection

D_t is the mean displacement norm of matched keypoints over every unordered
camera pair of an aligned bundle. The series is denoised, thresholded by a
two-class split of its values, and the first upward crossing is the
movement frame t_c (median over seeded runs).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.config import FeatureSettings, MovementSettings
from app.errors import EmptySet, InvalidParameter, WindowTooLarge
from app.vision.features import KeypointSet, detect_and_describe, match_descriptors, valid_region_mask
from app.vision.frames import FrameBundle, frame_id
from app.vision.workers import parallel_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MisalignmentSeries:
    """
    Per-frame D_t values (NaN where absent) and their denoised variant.

    frames holds the absolute frame index of every sample.
    """
    frames: np.ndarray
    values: np.ndarray
    smoothed: Optional[np.ndarray] = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if frames.shape != values.shape:
            raise InvalidParameter("frames and values must have equal length")
        present = values[~np.isnan(values)]
        if np.any(present < 0):
            raise InvalidParameter("D_t values must be non-negative")
        smoothed = values.copy() if self.smoothed is None else np.asarray(self.smoothed, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "smoothed", smoothed)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_values(cls, values: Sequence[Optional[float]], start: int = 0) -> "MisalignmentSeries":
        arr = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
        return cls(frames=np.arange(start, start + len(arr)), values=arr)

    def to_record(self) -> dict:
        def clean(arr):
            return [None if math.isnan(v) else round(float(v), 6) for v in arr]

        return {"frames": self.frames.tolist(), "values": clean(self.values), "smoothed": clean(self.smoothed)}


@dataclass(frozen=True)
class ThresholdResult:
    """value = min(before_max + 1, 2 * mean); degenerate when not positive"""
    value: float
    before_max: float
    mean_term: float

    @property
    def degenerate(self) -> bool:
        return not self.value > 0


@dataclass(frozen=True)
class MovementEvent:
    t_c: int
    threshold_used: float
    run_values: List[int]

    def to_record(self) -> dict:
        return {"t_c": self.t_c, "threshold_used": self.threshold_used, "run_values": list(self.run_values)}


@dataclass
class MovementScan:
    """Everything one scan produced: the event, the first run's series and per-run detail"""
    event: Optional[MovementEvent]
    series: MisalignmentSeries
    thresholds: List[Optional[float]] = field(default_factory=list)
    candidates: List[Optional[int]] = field(default_factory=list)


def pair_displacements(keypoint_sets: Sequence[KeypointSet], ratio: float = 0.75) -> np.ndarray:
    """Displacement norms of matched keypoints, concatenated over all unordered camera pairs"""
    norms = []
    for a, b in combinations(keypoint_sets, 2):
        try:
            matches = match_descriptors(a, b, ratio)
        except EmptySet:
            continue
        delta = a.positions[matches.index_a] - b.positions[matches.index_b]
        norms.append(np.linalg.norm(delta, axis=1))
    if not norms:
        return np.zeros(0)
    return np.concatenate(norms)


def misalignment_from_keypoints(
    keypoint_sets: Sequence[KeypointSet], min_matches: int = 10, ratio: float = 0.75
) -> Optional[float]:
    """D_t from per-camera keypoints; None when fewer than min_matches pairs in total"""
    norms = pair_displacements(keypoint_sets, ratio)
    if len(norms) < min_matches or len(norms) == 0:
        return None
    return float(norms.sum() / len(norms))


def _aligned_keypoints(aligned: FrameBundle, features: FeatureSettings) -> List[KeypointSet]:
    # warped views carry black borders; keep keypoints off them
    return [detect_and_describe(img, features, mask=valid_region_mask(img)) for img in aligned.images]


def frame_displacements(aligned: FrameBundle, features: Optional[FeatureSettings] = None) -> np.ndarray:
    features = features or FeatureSettings()
    return pair_displacements(_aligned_keypoints(aligned, features), features.ratio)


def misalignment_at(
    aligned: FrameBundle, min_matches: int = 10, features: Optional[FeatureSettings] = None
) -> Optional[float]:
    """Degree of misalignment D_t of one aligned bundle (pixels), or None"""
    norms = frame_displacements(aligned, features)
    if len(norms) < min_matches or len(norms) == 0:
        return None
    return float(norms.sum() / len(norms))


def _rolling(values: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    padded = np.concatenate([np.full(half, np.nan), values, np.full(half, np.nan)])
    return sliding_window_view(padded, window)


def denoise(series: MisalignmentSeries, mad_k: float = 3.0, window: int = 31) -> MisalignmentSeries:
    """
    Drop values further than mad_k MADs from their rolling median, then take a
    centred moving average of the remaining values.
    """
    if window < 1 or window % 2 == 0:
        raise InvalidParameter("window must be odd and >= 1", window=window)
    if window > len(series):
        raise WindowTooLarge("Smoothing window exceeds series length", window=window, length=len(series))

    values = series.values
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        windows = _rolling(values, window)
        median = np.nanmedian(windows, axis=1)
        mad = np.nanmedian(np.abs(windows - median[:, None]), axis=1)
        kept = values.copy()
        kept[np.abs(values - median) > mad_k * mad] = np.nan
        smoothed = np.nanmean(_rolling(kept, window), axis=1)

    dropped = int(np.sum(~np.isnan(values)) - np.sum(~np.isnan(kept)))
    if dropped:
        logger.debug("Denoise dropped %d outliers", dropped)
    return MisalignmentSeries(frames=series.frames, values=values, smoothed=smoothed)


def _two_means(x: np.ndarray, max_iters: int = 100) -> np.ndarray:
    """Boolean mask of the lower class; centroids start at min and max"""
    low, high = float(x.min()), float(x.max())
    lower = np.ones(len(x), dtype=bool)
    for iteration in range(max_iters):
        new_lower = np.abs(x - low) <= np.abs(x - high)
        if iteration and np.array_equal(new_lower, lower):
            break
        lower = new_lower
        low = float(x[lower].mean())
        if (~lower).any():
            high = float(x[~lower].mean())
    return lower


def cluster_threshold(series: MisalignmentSeries, window_minutes: float = 10.0, fps: float = 30.0) -> ThresholdResult:
    """
    Movement threshold from the smoothed series.

    The first window_minutes of smoothed values are split into two classes;
    the lower one is "before movement".
    """
    smoothed = series.smoothed
    present = smoothed[~np.isnan(smoothed)]
    if len(present) == 0:
        raise InvalidParameter("Cannot threshold an empty series")
    window_frames = max(1, int(round(window_minutes * 60.0 * fps)))
    head = smoothed[:window_frames]
    head = head[~np.isnan(head)]
    if len(head) == 0:
        head = present

    before = head[_two_means(head)]
    before_max = float(before.max())
    mean_term = float(2.0 * present.mean())
    result = ThresholdResult(value=min(before_max + 1.0, mean_term), before_max=before_max, mean_term=mean_term)
    if result.degenerate:
        logger.warning("Degenerate movement threshold %.3f", result.value)
    return result


def first_crossing(series: MisalignmentSeries, threshold: float) -> Optional[int]:
    """Frame of the first upward crossing of the smoothed series above threshold"""
    previous = None
    for t, v in zip(series.frames, series.smoothed):
        if np.isnan(v):
            continue
        if previous is not None and previous <= threshold < v:
            return int(t)
        previous = v
    return None


def median_candidate(candidates: Sequence[Optional[int]], runs: int) -> Optional[int]:
    """floor(median) of detecting runs; None when fewer than half the runs detect"""
    detected = [c for c in candidates if c is not None]
    if not detected or len(detected) < runs / 2:
        return None
    return int(math.floor(float(np.median(detected))))


def _sampled_series(
    frames: np.ndarray, norms: Sequence[np.ndarray], seed: int, fraction: float, min_matches: int
) -> MisalignmentSeries:
    rng = np.random.default_rng(seed)
    values = np.full(len(frames), np.nan)
    for i, n in enumerate(norms):
        if len(n) < min_matches or len(n) == 0:
            continue
        if fraction >= 1.0:
            values[i] = n.mean()
        else:
            size = max(1, int(round(fraction * len(n))))
            values[i] = n[rng.choice(len(n), size=size, replace=False)].mean()
    return MisalignmentSeries(frames=frames, values=values)


def scan_movement(
    aligned: Sequence[FrameBundle],
    settings: Optional[MovementSettings] = None,
    fps: float = 30.0,
    features: Optional[FeatureSettings] = None,
    workers: Optional[int] = None,
    cache: Optional[Dict[int, np.ndarray]] = None,
) -> MovementScan:
    """
    Detect at most one movement in an aligned stream.

    Keypoints and pairwise displacements are computed once per frame; each
    seeded run resamples the matched pairs, then denoises, thresholds and
    looks for the first upward crossing. `cache` maps absolute frame index to
    displacement norms and is only valid for one alignment state.
    """
    settings = settings or MovementSettings()
    features = features or FeatureSettings()
    if settings.runs % 2 == 0:
        raise InvalidParameter("runs must be odd", runs=settings.runs)
    if len(settings.seeds) < settings.runs:
        raise InvalidParameter("Need one seed per run", runs=settings.runs, seeds=len(settings.seeds))

    indices = list(range(0, len(aligned), settings.stride))
    frames = np.array([frame_id(aligned, i) for i in indices], dtype=np.int64)
    cache = {} if cache is None else cache

    def displacements(i: int) -> np.ndarray:
        return frame_displacements(aligned[i], features)

    missing = [i for i, t in zip(indices, frames) if int(t) not in cache]
    for i, computed in zip(missing, parallel_map(displacements, missing, workers)):
        cache[frame_id(aligned, i)] = computed
    norms = [cache[int(t)] for t in frames]

    candidates: List[Optional[int]] = []
    thresholds: List[Optional[float]] = []
    first_series: Optional[MisalignmentSeries] = None
    for run in range(settings.runs):
        raw = _sampled_series(frames, norms, settings.seeds[run], settings.sample_fraction, settings.min_matches)
        smoothed = denoise(raw, settings.mad_k, settings.window)
        if first_series is None:
            first_series = smoothed
        if np.all(np.isnan(smoothed.smoothed)):
            candidates.append(None)
            thresholds.append(None)
            continue
        threshold = cluster_threshold(smoothed, settings.window_minutes, fps)
        thresholds.append(threshold.value)
        candidate = None if threshold.degenerate else first_crossing(smoothed, threshold.value)
        candidates.append(candidate)
        logger.debug("Run %d (seed %d): threshold %.3f, crossing %s", run, settings.seeds[run], threshold.value, candidate)

    t_c = median_candidate(candidates, settings.runs)
    event = None
    if t_c is not None:
        used = [th for th, c in zip(thresholds, candidates) if c is not None]
        event = MovementEvent(
            t_c=t_c,
            threshold_used=float(np.median(used)),
            run_values=[c for c in candidates if c is not None],
        )
        logger.info("Movement detected at frame %d (runs %s)", t_c, candidates)
    return MovementScan(event=event, series=first_series, thresholds=thresholds, candidates=candidates)


def detect_movement(
    aligned: Sequence[FrameBundle],
    settings: Optional[MovementSettings] = None,
    fps: float = 30.0,
    features: Optional[FeatureSettings] = None,
    workers: Optional[int] = None,
) -> Optional[MovementEvent]:
    """MovementEvent for the first rig movement in the stream, or None"""
    return scan_movement(aligned, settings, fps, features, workers).event
