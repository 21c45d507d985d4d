"""
Keypoint detection, description and pairwise matching
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import cv2
import numpy as np

from app.config import FeatureSettings
from app.errors import EmptySet, ImageTooSmall, InvalidParameter
from app.vision.geometry import Point2

logger = logging.getLogger(__name__)

MIN_IMAGE_SIDE = 32
DESCRIPTOR_LENGTH = 128


@dataclass(frozen=True)
class Keypoint:
    position: Point2
    scale: float
    orientation: float
    response: float


@dataclass(frozen=True)
class KeypointSet:
    """
    Keypoints as parallel arrays.

    positions (N, 2), scales (N,), orientations (N,) in radians,
    responses (N,), descriptors (N, D) float32.
    """
    positions: np.ndarray
    scales: np.ndarray
    orientations: np.ndarray
    responses: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        n = len(self.positions)
        if not (len(self.scales) == len(self.orientations) == len(self.responses) == len(self.descriptors) == n):
            raise InvalidParameter("Keypoint arrays must have equal length")

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls, descriptor_length: int = DESCRIPTOR_LENGTH) -> "KeypointSet":
        return cls(
            positions=np.zeros((0, 2)),
            scales=np.zeros(0),
            orientations=np.zeros(0),
            responses=np.zeros(0),
            descriptors=np.zeros((0, descriptor_length), dtype=np.float32),
        )

    @classmethod
    def from_arrays(cls, positions, descriptors, scales=None, orientations=None, responses=None) -> "KeypointSet":
        """Hand-built sets (fixtures, tracking); missing attributes default to unit scale, zero angle"""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        n = len(positions)
        return cls(
            positions=positions,
            scales=np.ones(n) if scales is None else np.asarray(scales, dtype=np.float64),
            orientations=np.zeros(n) if orientations is None else np.asarray(orientations, dtype=np.float64),
            responses=np.ones(n) if responses is None else np.asarray(responses, dtype=np.float64),
            descriptors=np.asarray(descriptors, dtype=np.float32).reshape(n, -1),
        )

    @property
    def keypoints(self) -> List[Keypoint]:
        return [
            Keypoint(Point2(float(p[0]), float(p[1])), float(s), float(o), float(r))
            for p, s, o, r in zip(self.positions, self.scales, self.orientations, self.responses)
        ]

    def subset(self, index) -> "KeypointSet":
        return KeypointSet(
            self.positions[index],
            self.scales[index],
            self.orientations[index],
            self.responses[index],
            self.descriptors[index],
        )


@dataclass(frozen=True)
class MatchSet:
    """Matches as parallel arrays; each index_a (and index_b) appears at most once"""
    index_a: np.ndarray
    index_b: np.ndarray
    distance: np.ndarray

    def __len__(self) -> int:
        return len(self.index_a)

    @classmethod
    def empty(cls) -> "MatchSet":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))

    @property
    def matches(self):
        return list(zip(self.index_a.tolist(), self.index_b.tolist(), self.distance.tolist()))


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return cv2.cvtColor(img, cv2.COLOR_RGB2GRAY)


def valid_region_mask(img: np.ndarray, erode: int = 5) -> np.ndarray:
    """Non-black pixels, eroded so keypoints stay clear of warp borders"""
    gray = img if img.ndim == 2 else img.max(axis=2)
    mask = (gray > 0).astype(np.uint8) * 255
    if erode > 0:
        mask = cv2.erode(mask, np.ones((2 * erode + 1, 2 * erode + 1), np.uint8))
    return mask


def _make_detector(settings: FeatureSettings):
    # nfeatures=0 keeps everything; the cap is applied after a deterministic sort
    return cv2.SIFT_create(
        nfeatures=0,
        nOctaveLayers=settings.n_octave_layers,
        contrastThreshold=settings.contrast_threshold,
        edgeThreshold=settings.edge_threshold,
        sigma=settings.sigma,
    )


def detect_and_describe(
    img: np.ndarray,
    settings: Optional[FeatureSettings] = None,
    mask: Optional[np.ndarray] = None,
) -> KeypointSet:
    """
    Scale- and rotation-invariant keypoints with gradient-histogram descriptors.

    Output is sorted by response (strongest first), then by position, and
    capped at settings.max_keypoints.
    """
    settings = settings or FeatureSettings()
    if img.shape[0] < MIN_IMAGE_SIDE or img.shape[1] < MIN_IMAGE_SIDE:
        raise ImageTooSmall("Image must be at least 32x32", width=int(img.shape[1]), height=int(img.shape[0]))

    gray = to_gray(img)
    cv_keypoints, descriptors = _make_detector(settings).detectAndCompute(gray, mask)
    if not cv_keypoints or descriptors is None:
        return KeypointSet.empty()

    positions = np.array([kp.pt for kp in cv_keypoints], dtype=np.float64)
    scales = np.array([kp.size for kp in cv_keypoints], dtype=np.float64)
    orientations = np.deg2rad(np.array([kp.angle for kp in cv_keypoints], dtype=np.float64))
    responses = np.array([kp.response for kp in cv_keypoints], dtype=np.float64)

    order = np.lexsort((orientations, scales, positions[:, 1], positions[:, 0], -responses))
    order = order[: settings.max_keypoints]
    return KeypointSet(
        positions=positions[order],
        scales=scales[order],
        orientations=orientations[order],
        responses=responses[order],
        descriptors=np.ascontiguousarray(descriptors[order], dtype=np.float32),
    )


def _nearest_two(query: np.ndarray, train: np.ndarray, gate: Optional[np.ndarray] = None):
    """Nearest and second-nearest train index/distance per query row (-1 / inf when absent)"""
    matcher = cv2.BFMatcher(cv2.NORM_L2)
    k = min(2, len(train))
    if gate is None:
        knn = matcher.knnMatch(query, train, k=k)
    else:
        knn = matcher.knnMatch(query, train, k=k, mask=gate)
    first_idx = np.full(len(query), -1, dtype=np.int64)
    first_dist = np.full(len(query), np.inf)
    second_dist = np.full(len(query), np.inf)
    for row in knn:
        if not row:
            continue
        q = row[0].queryIdx
        first_idx[q] = row[0].trainIdx
        first_dist[q] = row[0].distance
        if len(row) > 1:
            second_dist[q] = row[1].distance
    return first_idx, first_dist, second_dist


def _passes_ratio(first: np.ndarray, second: np.ndarray, ratio: float) -> np.ndarray:
    # A lone candidate (no second neighbour) passes
    return (first <= ratio * second) | np.isinf(second)


def match_descriptors(a: KeypointSet, b: KeypointSet, ratio: float = 0.75) -> MatchSet:
    """
    Mutual nearest-neighbour matches passing the distance-ratio test both ways.

    The result is symmetric: matching b against a yields the same pairs with
    the indices swapped.
    """
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("Cannot match an empty keypoint set", size_a=len(a), size_b=len(b))
    if not (0.0 < ratio < 1.0):
        raise InvalidParameter("ratio must lie in (0, 1)", ratio=ratio)

    da = np.ascontiguousarray(a.descriptors, dtype=np.float32)
    db = np.ascontiguousarray(b.descriptors, dtype=np.float32)
    ab_idx, ab_d1, ab_d2 = _nearest_two(da, db)
    ba_idx, ba_d1, ba_d2 = _nearest_two(db, da)

    ok_a = (ab_idx >= 0) & _passes_ratio(ab_d1, ab_d2, ratio)
    ok_b = (ba_idx >= 0) & _passes_ratio(ba_d1, ba_d2, ratio)

    index_a = np.flatnonzero(ok_a)
    index_b = ab_idx[index_a]
    mutual = (ba_idx[index_b] == index_a) & ok_b[index_b]
    index_a, index_b = index_a[mutual], index_b[mutual]
    return MatchSet(index_a=index_a, index_b=index_b, distance=ab_d1[index_a])


def match_within_radius(
    a: KeypointSet,
    b: KeypointSet,
    radius: float,
    ratio: float = 0.8,
) -> MatchSet:
    """
    Match a -> b considering only candidates within `radius` px of each query.

    Used for tracking; one-directional ratio test among gated candidates,
    with duplicate targets resolved in favour of the smallest distance.
    """
    if len(a) == 0 or len(b) == 0:
        return MatchSet.empty()
    offsets = a.positions[:, None, :] - b.positions[None, :, :]
    gate = ((offsets ** 2).sum(axis=2) <= radius * radius).astype(np.uint8)
    idx, d1, d2 = _nearest_two(
        np.ascontiguousarray(a.descriptors, dtype=np.float32),
        np.ascontiguousarray(b.descriptors, dtype=np.float32),
        gate,
    )
    ok = (idx >= 0) & _passes_ratio(d1, d2, ratio)
    index_a = np.flatnonzero(ok)
    index_b = idx[index_a]
    distance = d1[index_a]
    # keep the closest query per target
    order = np.lexsort((index_a, distance, index_b))
    _, first = np.unique(index_b[order], return_index=True)
    keep = np.sort(order[first])
    return MatchSet(index_a=index_a[keep], index_b=index_b[keep], distance=distance[keep])
