"""
Projective geometry core
Homographies, normalized DLT, seeded RANSAC and image warping
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Sequence, Tuple

import cv2
import numpy as np

from app.errors import (
    DegenerateConfiguration,
    InvalidParameter,
    NoModelFound,
    PointAtInfinity,
    TooFewPoints,
)

logger = logging.getLogger(__name__)

DET_EPS = 1e-12
AREA_EPS = 1e-9


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Homography:
    """
    3x3 projective map between image planes.

    Invertible, and normalized so that m[2][2] == 1 whenever it is non-zero.
    """
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise DegenerateConfiguration("Homography has non-finite entries")
        if abs(m[2, 2]) > DET_EPS:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise DegenerateConfiguration("Homography is singular", det=float(np.linalg.det(m)))
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]]))

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "Homography":
        """Build from 9 row-major values"""
        if len(values) != 9:
            raise InvalidParameter("A homography needs 9 values", got=len(values))
        return cls(np.asarray(values, dtype=np.float64).reshape(3, 3))

    def to_values(self) -> List[float]:
        return [float(v) for v in self.m.ravel()]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.m, np.eye(3)))

    def __matmul__(self, other: "Homography") -> "Homography":
        return compose(self, other)


def compose(outer: Homography, inner: Homography) -> Homography:
    """Map applying `inner` first, then `outer`"""
    return Homography(outer.m @ inner.m)


def invert(h: Homography) -> Homography:
    return h.inverse()


@dataclass(frozen=True)
class CorrespondenceSet:
    """Point pairs (src -> dst), stored as two (N, 2) float arrays"""
    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.float64).reshape(-1, 2)
        dst = np.asarray(self.dst, dtype=np.float64).reshape(-1, 2)
        if src.shape != dst.shape:
            raise InvalidParameter("src and dst must pair up", src=len(src), dst=len(dst))
        if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
            raise InvalidParameter("Correspondences must be finite")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)

    def __len__(self) -> int:
        return len(self.src)

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[Sequence[float], Sequence[float]]]) -> "CorrespondenceSet":
        pairs = list(pairs)
        if not pairs:
            return cls.empty()
        src = [p[0] for p in pairs]
        dst = [p[1] for p in pairs]
        return cls(np.asarray(src), np.asarray(dst))

    @property
    def pairs(self) -> List[Tuple[Point2, Point2]]:
        return [(Point2(*s), Point2(*d)) for s, d in zip(self.src, self.dst)]

    def subset(self, mask_or_index) -> "CorrespondenceSet":
        return CorrespondenceSet(self.src[mask_or_index], self.dst[mask_or_index])

    def concat(self, other: "CorrespondenceSet") -> "CorrespondenceSet":
        return CorrespondenceSet(np.vstack([self.src, other.src]), np.vstack([self.dst, other.dst]))

    def dedupe(self, grid: float = 1.0) -> "CorrespondenceSet":
        """Drop pairs that snap to the same cell of a `grid`-px lattice (first occurrence wins)"""
        if len(self) == 0:
            return self
        keys = np.round(np.hstack([self.src, self.dst]) / grid).astype(np.int64)
        _, first = np.unique(keys, axis=0, return_index=True)
        return self.subset(np.sort(first))


def _normalizing_transform(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)"""
    centroid = points.mean(axis=0)
    mean_dist = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    if mean_dist < DET_EPS:
        raise DegenerateConfiguration("All points coincide")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _apply(m: np.ndarray, points: np.ndarray) -> np.ndarray:
    homog = np.hstack([points, np.ones((len(points), 1))]) @ m.T
    return homog[:, :2] / homog[:, 2:3]


def _has_collinear_triple(points: np.ndarray) -> bool:
    for a, b, c in itertools.combinations(range(len(points)), 3):
        ab = points[b] - points[a]
        ac = points[c] - points[a]
        if 0.5 * abs(ab[0] * ac[1] - ab[1] * ac[0]) < AREA_EPS:
            return True
    return False


def check_configuration(corr: CorrespondenceSet) -> None:
    """
    Raise if the source points cannot determine a homography.

    Minimal sets are rejected when any three points are collinear (area test on
    normalized coordinates). Larger sets are rejected when all points lie on one
    line or fewer than four distinct points remain.
    """
    if len(corr) < 4:
        raise TooFewPoints("A homography needs at least 4 correspondences", count=len(corr))
    t_src = _normalizing_transform(corr.src)
    src_n = _apply(t_src, corr.src)
    if len(corr) == 4:
        if _has_collinear_triple(src_n):
            raise DegenerateConfiguration("Three source points are collinear")
        return
    if len(np.unique(np.round(src_n / AREA_EPS), axis=0)) < 4:
        raise DegenerateConfiguration("Fewer than 4 distinct source points")
    centered = src_n - src_n.mean(axis=0)
    smallest = np.linalg.svd(centered, compute_uv=False)[-1]
    if smallest / math.sqrt(len(corr)) < AREA_EPS:
        raise DegenerateConfiguration("All source points are collinear")


def estimate_dlt(corr: CorrespondenceSet) -> Homography:
    """
    Least-squares homography src -> dst by the direct linear transform.

    Both point sets are Hartley-normalized before solving; the solution is
    the right singular vector of the smallest singular value.
    """
    check_configuration(corr)
    if len(corr) == 4:
        t_tmp = _normalizing_transform(corr.dst)
        if _has_collinear_triple(_apply(t_tmp, corr.dst)):
            raise DegenerateConfiguration("Three destination points are collinear")

    t_src = _normalizing_transform(corr.src)
    t_dst = _normalizing_transform(corr.dst)
    src = _apply(t_src, corr.src)
    dst = _apply(t_dst, corr.dst)

    n = len(corr)
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    zeros, ones = np.zeros(n), np.ones(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.column_stack([x, y, ones, zeros, zeros, zeros, -u * x, -u * y, -u])
    a[1::2] = np.column_stack([zeros, zeros, zeros, x, y, ones, -v * x, -v * y, -v])

    _, s, vt = np.linalg.svd(a)
    if s[7] <= AREA_EPS * s[0]:
        raise DegenerateConfiguration("Correspondences do not determine a unique homography")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(t_dst) @ hn @ t_src
    return Homography(m)


def reprojection_errors(h: Homography, corr: CorrespondenceSet) -> np.ndarray:
    """Forward transfer error |H(src) - dst| per pair; inf where the point maps to infinity"""
    if len(corr) == 0:
        return np.zeros(0)
    homog = np.hstack([corr.src, np.ones((len(corr), 1))]) @ h.m.T
    w = homog[:, 2]
    errors = np.full(len(corr), np.inf)
    ok = np.abs(w) > DET_EPS
    projected = homog[ok, :2] / w[ok, None]
    errors[ok] = np.sqrt(((projected - corr.dst[ok]) ** 2).sum(axis=1))
    return errors


def _required_iterations(inlier_ratio: float, confidence: float, sample_size: int = 4) -> float:
    good = inlier_ratio ** sample_size
    if good <= 0.0:
        return math.inf
    if good >= 1.0:
        return 0.0
    return math.log(1.0 - confidence) / math.log(1.0 - good)


def estimate_ransac(
    corr: CorrespondenceSet,
    inlier_tol: float = 3.0,
    confidence: float = 0.995,
    max_iters: int = 2000,
    seed: int = 0,
) -> Tuple[Homography, np.ndarray]:
    """
    Robust homography by RANSAC over minimal 4-point samples.

    The best hypothesis (most inliers, then lowest summed inlier error) is
    refit by DLT on its inliers until the inlier set stops changing.
    Deterministic for a given seed.
    """
    if len(corr) < 4:
        raise TooFewPoints("RANSAC needs at least 4 correspondences", count=len(corr))
    if not (0.0 < confidence < 1.0) or inlier_tol <= 0 or max_iters < 1:
        raise InvalidParameter("Invalid RANSAC parameters", inlier_tol=inlier_tol, confidence=confidence)

    rng = np.random.default_rng(seed)
    n = len(corr)
    best_count, best_cost, best_mask = 0, math.inf, None
    needed = math.inf
    iterations = 0
    while iterations < max_iters and iterations < needed:
        iterations += 1
        sample = rng.choice(n, size=4, replace=False)
        try:
            h = estimate_dlt(corr.subset(sample))
        except DegenerateConfiguration:
            continue
        errors = reprojection_errors(h, corr)
        mask = errors <= inlier_tol
        count = int(mask.sum())
        cost = float(errors[mask].sum())
        if count > best_count or (count == best_count and count > 0 and cost < best_cost):
            best_count, best_cost, best_mask = count, cost, mask
            needed = _required_iterations(count / n, confidence)

    if best_mask is None or best_count < 4:
        raise NoModelFound("No sample produced at least 4 inliers", iterations=iterations)

    mask = best_mask
    h = estimate_dlt(corr.subset(mask))
    for _ in range(3):
        refined = reprojection_errors(h, corr) <= inlier_tol
        if refined.sum() < 4 or np.array_equal(refined, mask):
            break
        try:
            candidate = estimate_dlt(corr.subset(refined))
        except DegenerateConfiguration:
            break
        mask, h = refined, candidate
    mask = reprojection_errors(h, corr) <= inlier_tol
    logger.debug("RANSAC: %d iterations, %d/%d inliers", iterations, int(mask.sum()), n)
    return h, mask


def warp_point(h: Homography, p: Point2) -> Point2:
    x, y = float(p[0]), float(p[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) <= DET_EPS:
        raise PointAtInfinity("Point maps to infinity", x=x, y=y)
    return Point2(
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
    )


def warp_points(h: Homography, points: np.ndarray) -> np.ndarray:
    """Vectorized warp_point over an (N, 2) array"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    homog = np.hstack([points, np.ones((len(points), 1))]) @ h.m.T
    if np.any(np.abs(homog[:, 2]) <= DET_EPS):
        raise PointAtInfinity("A point maps to infinity")
    return homog[:, :2] / homog[:, 2:3]


def warp_image(h: Homography, img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """
    Warp `img` by `h` into an out_w x out_h canvas.

    Inverse mapping with bilinear interpolation; destinations whose source
    falls outside the input are black.
    """
    if img is None or img.size == 0:
        raise InvalidParameter("Cannot warp an empty image")
    if h.is_identity() and img.shape[1] == out_w and img.shape[0] == out_h:
        return img.copy()
    return cv2.warpPerspective(
        img,
        np.linalg.inv(h.m),
        (int(out_w), int(out_h)),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )
