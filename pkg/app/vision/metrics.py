"""
Stabilisation metrics

ITF is the mean PSNR between consecutive frames (higher is steadier);
AvSpeed is the mean per-frame displacement of tracked keypoints (lower is
steadier).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sqlmodel import Field, SQLModel

from app.config import FeatureSettings, MetricsSettings
from app.errors import DimensionMismatch, NoTrackablePoints, TooFewFrames
from app.vision.features import KeypointSet, detect_and_describe, match_within_radius, valid_region_mask
from app.vision.workers import parallel_map

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
_LUMA = np.array([0.299, 0.587, 0.114])


def luma(img: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma as float64"""
    if img.ndim == 2:
        return img.astype(np.float64)
    return img[..., :3].astype(np.float64) @ _LUMA


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP) -> float:
    if a.shape != b.shape:
        raise DimensionMismatch("Images differ in size", a=list(a.shape), b=list(b.shape))
    diff = luma(a) - luma(b)
    mse = float(np.mean(diff * diff))
    if mse == 0:
        return cap
    return float(min(cap, 10.0 * np.log10(255.0 ** 2 / mse)))


def psnr_trace(video: Sequence[np.ndarray], cap: float = PSNR_CAP, workers: Optional[int] = None) -> List[float]:
    """PSNR of every consecutive frame pair"""
    if len(video) < 2:
        raise TooFewFrames("Need at least two frames", frames=len(video))
    return parallel_map(lambda t: psnr(video[t], video[t + 1], cap), range(len(video) - 1), workers)


def itf(video: Sequence[np.ndarray], cap: float = PSNR_CAP, workers: Optional[int] = None) -> float:
    return float(np.mean(psnr_trace(video, cap, workers)))


@dataclass
class TrackingResult:
    """Per-transition mean displacement and the totals behind AvSpeed"""
    displacement_sum: float = 0.0
    steps: int = 0
    tracks: int = 0
    per_transition: List[Optional[float]] = field(default_factory=list)

    @property
    def avspeed(self) -> float:
        return self.displacement_sum / self.steps if self.steps else 0.0


def _detect(img: np.ndarray, settings: MetricsSettings) -> KeypointSet:
    features = FeatureSettings(max_keypoints=settings.max_keypoints)
    return detect_and_describe(img, features, mask=valid_region_mask(img))


def track_points(video: Sequence[np.ndarray], settings: Optional[MetricsSettings] = None) -> TrackingResult:
    """
    Track keypoints from frame 0 by radius-gated descriptor matching.

    Lost tracks are dropped. When fewer than half the initial tracks remain,
    keypoints of the current frame are added as new tracks. Each track keeps
    the descriptor it was first detected with.
    """
    settings = settings or MetricsSettings()
    if len(video) < 2:
        raise TooFewFrames("Need at least two frames", frames=len(video))

    live = _detect(video[0], settings)
    initial = len(live)
    if initial == 0:
        raise NoTrackablePoints("No keypoints on the first frame")

    result = TrackingResult(tracks=initial)
    for t in range(1, len(video)):
        current = _detect(video[t], settings)
        matches = match_within_radius(live, current, settings.search_radius, settings.ratio)
        if len(matches):
            delta = current.positions[matches.index_b] - live.positions[matches.index_a]
            norms = np.linalg.norm(delta, axis=1)
            result.displacement_sum += float(norms.sum())
            result.steps += len(norms)
            result.per_transition.append(float(norms.mean()))
            live = KeypointSet.from_arrays(
                current.positions[matches.index_b],
                live.descriptors[matches.index_a],
            )
        else:
            result.per_transition.append(None)
            live = KeypointSet.empty()

        if len(live) < initial / 2 and len(current):
            known = {tuple(np.round(p, 3)) for p in live.positions}
            fresh = [i for i, p in enumerate(current.positions) if tuple(np.round(p, 3)) not in known]
            if fresh:
                added = current.subset(np.array(fresh))
                live = KeypointSet.from_arrays(
                    np.vstack([live.positions, added.positions]),
                    np.vstack([live.descriptors, added.descriptors]),
                )
                result.tracks += len(fresh)
                logger.debug("Frame %d: replenished %d tracks", t, len(fresh))

    if result.steps == 0:
        raise NoTrackablePoints("No keypoint could be tracked across any transition", frames=len(video))
    return result


def avspeed(video: Sequence[np.ndarray], settings: Optional[MetricsSettings] = None) -> float:
    return track_points(video, settings).avspeed


class MetricsReport(SQLModel):
    """ITF/AvSpeed summary of one video"""
    itf_db: float = Field(ge=0, description="Mean consecutive-frame PSNR (dB)")
    avspeed: float = Field(ge=0, description="Mean tracked displacement (px/frame)")
    n_frames: int = Field(ge=2)
    n_tracked_points: int = Field(ge=0)

    def to_record(self) -> dict:
        return {
            "itf_db": round(self.itf_db, 6),
            "avspeed": round(self.avspeed, 6),
            "n_frames": self.n_frames,
            "n_tracked_points": self.n_tracked_points,
        }


@dataclass
class Evaluation:
    report: MetricsReport
    psnr: List[float]
    displacement: List[Optional[float]]

    def trace(self) -> List[dict]:
        return [
            {"t": t, "psnr_db": round(p, 6), "displacement": None if d is None else round(d, 6)}
            for t, (p, d) in enumerate(zip(self.psnr, self.displacement))
        ]


def evaluate_video(
    video: Sequence[np.ndarray], settings: Optional[MetricsSettings] = None, workers: Optional[int] = None
) -> Evaluation:
    settings = settings or MetricsSettings()
    trace = psnr_trace(video, settings.psnr_cap, workers)
    tracking = track_points(video, settings)
    report = MetricsReport(
        itf_db=float(np.mean(trace)),
        avspeed=tracking.avspeed,
        n_frames=len(video),
        n_tracked_points=tracking.tracks,
    )
    logger.info("Evaluated %d frames: ITF %.3f dB, AvSpeed %.3f px/frame", len(video), report.itf_db, report.avspeed)
    return Evaluation(report=report, psnr=trace, displacement=tracking.per_transition)


def compare_reports(video: MetricsReport, baseline: MetricsReport) -> dict:
    """Side-by-side record with ITF gain and AvSpeed ratio"""
    record = {"video": video.to_record(), "baseline": baseline.to_record()}
    record["itf_gain"] = round(video.itf_db / baseline.itf_db, 6) if baseline.itf_db > 0 else None
    record["avspeed_ratio"] = round(video.avspeed / baseline.avspeed, 6) if baseline.avspeed > 0 else None
    return record


def evaluate(
    video: Sequence[np.ndarray],
    baseline: Optional[Sequence[np.ndarray]] = None,
    settings: Optional[MetricsSettings] = None,
    include_trace: bool = False,
    workers: Optional[int] = None,
) -> dict:
    """Metrics report record for a video, optionally compared with a baseline"""
    result = evaluate_video(video, settings, workers)
    if baseline is None:
        record = result.report.to_record()
    else:
        record = compare_reports(result.report, evaluate_video(baseline, settings, workers).report)
    if include_trace:
        record["trace"] = result.trace()
    return record
