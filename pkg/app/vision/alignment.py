"""
Multi-camera alignment
Accumulate correspondences against a reference camera, fit one homography
per camera, and warp bundles into the reference image plane.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from app.config import FeatureSettings, RansacSettings
from app.errors import (
    EmptySet,
    GeometryError,
    InsufficientCorrespondences,
    InvalidParameter,
)
from app.vision.features import KeypointSet, detect_and_describe, match_descriptors
from app.vision.frames import FrameBundle, FrameSequence, frame_id
from app.vision.geometry import (
    CorrespondenceSet,
    Homography,
    check_configuration,
    estimate_ransac,
    warp_image,
)
from app.vision.workers import parallel_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlignmentState:
    """
    Per-camera homographies into the reference image plane, valid from a frame.

    The reference camera always holds the identity.
    """
    reference_camera: int
    maps: Mapping[int, Homography]
    valid_from: int

    def __post_init__(self):
        maps = dict(self.maps)
        if self.reference_camera not in maps:
            raise InvalidParameter("Reference camera has no map", reference=self.reference_camera)
        if not np.allclose(maps[self.reference_camera].m, np.eye(3), atol=1e-12):
            raise InvalidParameter("Reference camera map must be the identity", reference=self.reference_camera)
        object.__setattr__(self, "maps", maps)

    @classmethod
    def identity(cls, camera_ids: Iterable[int], reference_camera: int = 0, valid_from: int = 0) -> "AlignmentState":
        return cls(reference_camera, {c: Homography.identity() for c in camera_ids}, valid_from)

    def is_identity(self) -> bool:
        return all(h.is_identity() for h in self.maps.values())

    def to_record(self) -> dict:
        """camera id -> 9 row-major values, plus reference and valid_from"""
        return {
            "reference_camera": self.reference_camera,
            "valid_from": self.valid_from,
            "maps": {str(cam): h.to_values() for cam, h in sorted(self.maps.items())},
        }

    @classmethod
    def from_record(cls, record: dict) -> "AlignmentState":
        return cls(
            reference_camera=int(record["reference_camera"]),
            maps={int(cam): Homography.from_values(values) for cam, values in record["maps"].items()},
            valid_from=int(record["valid_from"]),
        )


@dataclass
class AccumulatedCorrespondences:
    """Per-camera correspondence sets (camera -> reference) and how many frames fed them"""
    sets: Dict[int, CorrespondenceSet]
    frames_used: int
    per_frame: Dict[int, List[int]] = field(default_factory=dict)

    @property
    def counts(self) -> Dict[int, int]:
        return {cam: len(c) for cam, c in self.sets.items()}


def _pairs_against_reference(
    ref: KeypointSet, other: KeypointSet, ratio: float
) -> CorrespondenceSet:
    try:
        matches = match_descriptors(other, ref, ratio)
    except EmptySet:
        return CorrespondenceSet.empty()
    return CorrespondenceSet(other.positions[matches.index_a], ref.positions[matches.index_b])


def accumulate_correspondences(
    bundles: Sequence[FrameBundle],
    reference: int = 0,
    target_count: int = 200,
    max_frames: int = 300,
    features: Optional[FeatureSettings] = None,
    workers: Optional[int] = None,
) -> AccumulatedCorrespondences:
    """
    Union of ratio-test matches of every camera against the reference,
    gathered frame by frame until each camera holds target_count pairs or
    max_frames frames are consumed. Pairs are deduplicated on a 1-px grid.
    """
    if len(bundles) == 0:
        raise InvalidParameter("No frames to accumulate from")
    if target_count < 4:
        raise InvalidParameter("target_count must be at least 4", target_count=target_count)
    features = features or FeatureSettings()

    camera_ids = bundles[0].camera_ids
    if reference not in camera_ids:
        raise InvalidParameter("Reference camera not in bundle", reference=reference)
    others = [c for c in camera_ids if c != reference]
    sets = {c: CorrespondenceSet.empty() for c in others}
    per_frame: Dict[int, List[int]] = {c: [] for c in others}

    frames_used = 0
    for i in range(min(len(bundles), max_frames)):
        pending = [c for c in others if len(sets[c]) < target_count]
        if not pending:
            break
        bundle = bundles[i]
        frames_used += 1
        keypoints = parallel_map(
            lambda cam: detect_and_describe(bundle.image(cam), features), [reference] + pending, workers
        )
        ref_kp = keypoints[0]
        for cam, kp in zip(pending, keypoints[1:]):
            fresh = _pairs_against_reference(ref_kp, kp, features.ratio)
            merged = sets[cam].concat(fresh).dedupe(1.0)
            per_frame[cam].append(len(merged) - len(sets[cam]))
            sets[cam] = merged
        logger.debug("Accumulation frame %d: %s", bundle.t, {c: len(s) for c, s in sets.items()})

    short = sorted(c for c in others if len(sets[c]) < 4)
    if short:
        raise InsufficientCorrespondences(
            "Cameras below 4 correspondences after accumulation",
            cameras=short,
            counts={c: len(sets[c]) for c in others},
            frames=frames_used,
        )
    return AccumulatedCorrespondences(sets=sets, frames_used=frames_used, per_frame=per_frame)


def compute_alignment(
    corr: Mapping[int, CorrespondenceSet],
    t_now: int,
    ransac: Optional[RansacSettings] = None,
    reference: int = 0,
) -> AlignmentState:
    """Robust homography camera i -> reference for every camera in `corr`"""
    ransac = ransac or RansacSettings()
    maps: Dict[int, Homography] = {reference: Homography.identity()}
    for cam in sorted(corr):
        if cam == reference:
            continue
        try:
            check_configuration(corr[cam])
            h, inliers = estimate_ransac(
                corr[cam],
                inlier_tol=ransac.inlier_tol,
                confidence=ransac.confidence,
                max_iters=ransac.max_iters,
                seed=ransac.seed,
            )
        except GeometryError as e:
            raise e.with_context(camera=cam)
        logger.debug("Camera %d: %d/%d inliers", cam, int(inliers.sum()), len(corr[cam]))
        maps[cam] = h
    logger.info("Alignment computed for %d cameras, valid from frame %d", len(maps), t_now)
    return AlignmentState(reference_camera=reference, maps=maps, valid_from=t_now)


def align_stream(
    bundles: Sequence[FrameBundle],
    t_now: int,
    features: Optional[FeatureSettings] = None,
    ransac: Optional[RansacSettings] = None,
    reference: int = 0,
    target_count: int = 200,
    max_frames: int = 300,
    workers: Optional[int] = None,
) -> AlignmentState:
    """accumulate_correspondences followed by compute_alignment"""
    acc = accumulate_correspondences(bundles, reference, target_count, max_frames, features, workers)
    logger.info("Accumulated %s pairs over %d frames", acc.counts, acc.frames_used)
    return compute_alignment(acc.sets, t_now, ransac, reference)


def apply_alignment(state: AlignmentState, bundle: FrameBundle, workers: Optional[int] = 1) -> FrameBundle:
    """Warp each view into the reference plane; identity maps pass images through unchanged"""
    width, height = bundle.size

    def warp(index: int) -> np.ndarray:
        cam = bundle.camera_ids[index]
        img = bundle.images[index]
        h = state.maps.get(cam)
        if h is None:
            raise InvalidParameter("No homography for camera", camera=cam)
        if cam == state.reference_camera or h.is_identity():
            return img
        return warp_image(h, img, width, height)

    images = parallel_map(warp, range(len(bundle.images)), workers)
    return FrameBundle(t=bundle.t, images=tuple(images), camera_ids=bundle.camera_ids)


class SubSequence(FrameSequence):
    """Window [start, stop) of a longer stream, re-indexed from 0 but keeping absolute t"""

    def __init__(self, source: Sequence[FrameBundle], start: int, stop: int):
        self.source = source
        self.start = max(0, start)
        self.stop = min(len(source), stop)
        self.camera_ids = getattr(source, "camera_ids", ())

    def __len__(self) -> int:
        return max(0, self.stop - self.start)

    def bundle(self, t: int) -> FrameBundle:
        return self.source[self.start + t]

    def frame_id(self, i: int) -> int:
        return frame_id(self.source, self.start + i)


class AlignedSequence(FrameSequence):
    """
    Lazily aligned stream: each frame uses the latest state whose
    valid_from is at or before it (or the earliest state before that).
    """

    def __init__(self, source: Sequence[FrameBundle], states: Sequence[AlignmentState], workers: Optional[int] = 1):
        if not states:
            raise InvalidParameter("At least one alignment state is required")
        self.source = source
        self.states = sorted(states, key=lambda s: s.valid_from)
        self.workers = workers
        self.camera_ids = getattr(source, "camera_ids", ())

    def __len__(self) -> int:
        return len(self.source)

    def state_for(self, t: int) -> AlignmentState:
        current = self.states[0]
        for state in self.states:
            if state.valid_from <= t:
                current = state
            else:
                break
        return current

    def bundle(self, t: int) -> FrameBundle:
        raw = self.source[t]
        return apply_alignment(self.state_for(raw.t), raw, self.workers)

    def frame_id(self, i: int) -> int:
        return frame_id(self.source, i)
