"""
Homography estimation, RANSAC and warping
"""
import numpy as np
import pytest

from app.errors import DegenerateConfiguration, InvalidParameter, NoModelFound, PointAtInfinity, TooFewPoints
from app.vision.geometry import (
    CorrespondenceSet,
    Homography,
    compose,
    estimate_dlt,
    estimate_ransac,
    invert,
    reprojection_errors,
    warp_image,
    warp_point,
    warp_points,
)

SQUARE = np.array([[10.0, 10.0], [300.0, 20.0], [280.0, 250.0], [15.0, 240.0]])


def random_homography(rng) -> Homography:
    """Mild projective map keeping [0, 640)^2 well in front of the camera"""
    m = np.eye(3)
    m[:2, :2] += rng.uniform(-0.2, 0.2, (2, 2))
    m[:2, 2] = rng.uniform(-50, 50, 2)
    m[2, :2] = rng.uniform(-1e-4, 1e-4, 2)
    return Homography(m)


def test_dlt_identity():
    """dst = src gives the identity"""
    h = estimate_dlt(CorrespondenceSet(SQUARE, SQUARE))
    assert np.allclose(h.m, np.eye(3), atol=1e-9), f"Expected identity, got {h.m}"


def test_dlt_translation():
    """A pure shift recovers m[0][2] = 5, m[1][2] = 3"""
    h = estimate_dlt(CorrespondenceSet(SQUARE, SQUARE + [5.0, 3.0]))
    assert np.allclose(h.m, Homography.translation(5, 3).m, atol=1e-9)
    assert abs(h.m[0, 2] - 5) < 1e-9 and abs(h.m[1, 2] - 3) < 1e-9


def test_dlt_recovers_random_homographies():
    """20 exact pairs per generator reproject below 1e-6 px"""
    rng = np.random.default_rng(7)
    for _ in range(200):
        truth = random_homography(rng)
        src = rng.uniform(0, 640, (20, 2))
        corr = CorrespondenceSet(src, warp_points(truth, src))
        h = estimate_dlt(corr)
        assert reprojection_errors(h, corr).max() < 1e-6


def test_dlt_rejects_bad_input():
    """Fewer than 4 pairs and collinear sources are refused"""
    with pytest.raises(TooFewPoints):
        estimate_dlt(CorrespondenceSet(SQUARE[:3], SQUARE[:3]))
    line = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 7.0]])
    with pytest.raises(DegenerateConfiguration):
        estimate_dlt(CorrespondenceSet(line, line))
    all_on_line = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(DegenerateConfiguration):
        estimate_dlt(CorrespondenceSet(all_on_line, all_on_line))


def test_dlt_scale_covariance():
    """Scaling dst by s scales every warped point by s"""
    rng = np.random.default_rng(3)
    for _ in range(100):
        truth = random_homography(rng)
        src = rng.uniform(0, 640, (12, 2))
        dst = warp_points(truth, src)
        s = rng.uniform(0.5, 3.0)
        h = estimate_dlt(CorrespondenceSet(src, dst))
        h_scaled = estimate_dlt(CorrespondenceSet(src, s * dst))
        assert np.abs(warp_points(h_scaled, src) - s * warp_points(h, src)).max() < 1e-6


def test_compose_with_inverse_is_identity():
    """compose(H, invert(H)) is the identity elementwise"""
    rng = np.random.default_rng(11)
    for _ in range(1000):
        h = random_homography(rng)
        assert np.allclose(compose(h, invert(h)).m, np.eye(3), atol=1e-9)
        assert np.allclose((invert(h) @ h).m, np.eye(3), atol=1e-9)


def test_homography_invariants():
    """Singular maps are refused and m[2][2] is normalised to 1"""
    with pytest.raises(DegenerateConfiguration):
        Homography(np.zeros((3, 3)))
    h = Homography(2.0 * np.eye(3))
    assert h.m[2, 2] == 1.0 and h.is_identity()
    with pytest.raises(InvalidParameter):
        Homography.from_values([1.0, 0.0, 0.0])
    assert np.array_equal(Homography.from_values(h.to_values()).m, h.m)


def test_ransac_translation_matches_dlt():
    """Outlier-free data: same map as DLT, every pair an inlier"""
    corr = CorrespondenceSet(SQUARE, SQUARE + [5.0, 3.0])
    h, mask = estimate_ransac(corr)
    assert np.allclose(h.m, estimate_dlt(corr).m, atol=1e-9)
    assert mask.all()


def test_ransac_with_outliers():
    """100 true pairs plus 30 random ones: < 1 px on the true pairs, >= 95 flagged"""
    rng = np.random.default_rng(0)
    truth = random_homography(rng)
    src = rng.uniform(0, 640, (130, 2))
    dst = warp_points(truth, src)
    dst[100:] = rng.uniform(0, 640, (30, 2))
    h, mask = estimate_ransac(CorrespondenceSet(src, dst), inlier_tol=3.0, seed=0)
    inliers = CorrespondenceSet(src[:100], dst[:100])
    assert reprojection_errors(h, inliers).max() < 1.0
    assert mask[:100].sum() >= 95, f"Only {mask[:100].sum()} true inliers flagged"


def test_ransac_recovers_100_contaminated_sets():
    """70 noisy true pairs and 30 outliers per set; every set recovered"""
    rng = np.random.default_rng(42)
    recovered = 0
    for trial in range(100):
        truth = random_homography(rng)
        src = rng.uniform(0, 640, (100, 2))
        dst = warp_points(truth, src) + rng.normal(0, 0.3, (100, 2))
        dst[70:] = rng.uniform(0, 640, (30, 2))
        h, _ = estimate_ransac(CorrespondenceSet(src, dst), seed=trial)
        exact = CorrespondenceSet(src[:70], warp_points(truth, src[:70]))
        if reprojection_errors(h, exact).mean() < 1.0:
            recovered += 1
    assert recovered == 100, f"Expected 100/100 recovered, got {recovered}"


def test_ransac_is_reproducible():
    """Same seed and input give bit-identical output"""
    rng = np.random.default_rng(5)
    src = rng.uniform(0, 640, (60, 2))
    dst = warp_points(random_homography(rng), src)
    dst[40:] = rng.uniform(0, 640, (20, 2))
    corr = CorrespondenceSet(src, dst)
    h1, mask1 = estimate_ransac(corr, seed=9)
    h2, mask2 = estimate_ransac(corr, seed=9)
    assert np.array_equal(h1.m, h2.m)
    assert np.array_equal(mask1, mask2)


def test_ransac_degenerate_sample():
    """Four pairs with three collinear sources never yield a model"""
    src = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [5.0, 9.0]])
    with pytest.raises(NoModelFound):
        estimate_ransac(CorrespondenceSet(src, src), max_iters=50)
    with pytest.raises(TooFewPoints):
        estimate_ransac(CorrespondenceSet(src[:3], src[:3]))


def test_warp_point():
    """Identity, translation, inverse round trip and the point at infinity"""
    assert warp_point(Homography.identity(), (10, 20)) == (10, 20)
    assert warp_point(Homography.translation(5, 3), (0, 0)) == (5, 3)

    rng = np.random.default_rng(1)
    for _ in range(1000):
        h = random_homography(rng)
        p = rng.uniform(0, 640, 2)
        back = warp_point(h.inverse(), warp_point(h, p))
        assert abs(back[0] - p[0]) < 1e-9 and abs(back[1] - p[1]) < 1e-9

    horizon = Homography(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.01, 0.0, 1.0]]))
    with pytest.raises(PointAtInfinity):
        warp_point(horizon, (100.0, 5.0))


def test_warp_image_identity_and_translation():
    """Identity is bit-exact; a +5 px shift moves columns and blackens the first five"""
    rng = np.random.default_rng(2)
    img = rng.integers(1, 256, (60, 80, 3), dtype=np.uint8)
    assert np.array_equal(warp_image(Homography.identity(), img, 80, 60), img)

    shifted = warp_image(Homography.translation(5, 0), img, 80, 60)
    assert np.array_equal(shifted[:, 5:], img[:, :-5])
    assert not shifted[:, :5].any()


def test_warp_image_round_trip():
    """H then H^-1 loses less than 2 levels on average over the doubly-interior region"""
    import cv2

    rng = np.random.default_rng(4)
    noise = rng.normal(0, 1, (240, 320)).astype(np.float32)
    smooth = cv2.GaussianBlur(noise, (0, 0), 3.0)
    smooth = (smooth - smooth.min()) / (smooth.max() - smooth.min())
    img = np.repeat((30 + 200 * smooth)[..., None], 3, axis=2).astype(np.uint8)

    angle = np.deg2rad(4.0)
    h = Homography(
        np.array(
            [[1.02 * np.cos(angle), -np.sin(angle), 6.3], [np.sin(angle), 1.02 * np.cos(angle), -4.7], [1e-5, 0.0, 1.0]]
        )
    )
    back = warp_image(h.inverse(), warp_image(h, img, 320, 240), 320, 240)
    support = warp_image(h.inverse(), warp_image(h, np.full_like(img, 255), 320, 240), 320, 240)
    interior = cv2.erode((support[..., 0] == 255).astype(np.uint8), np.ones((5, 5), np.uint8)).astype(bool)
    assert interior.mean() > 0.5
    diff = np.abs(back.astype(np.float64) - img.astype(np.float64))[interior]
    assert diff.mean() < 2.0, f"Mean round-trip difference {diff.mean():.3f}"


def test_warp_image_rejects_empty():
    with pytest.raises(InvalidParameter):
        warp_image(Homography.identity(), np.zeros((0, 0, 3), np.uint8), 10, 10)


def test_correspondence_set_dedupe():
    """Pairs snapping to the same 1 px cell collapse to the first"""
    corr = CorrespondenceSet.from_pairs([((0, 0), (1, 1)), ((0.2, 0.1), (1.1, 0.9)), ((5, 5), (6, 6))])
    deduped = corr.dedupe(1.0)
    assert len(deduped) == 2
    assert np.array_equal(deduped.src[0], [0.0, 0.0])
    with pytest.raises(InvalidParameter):
        CorrespondenceSet(np.zeros((3, 2)), np.zeros((2, 2)))
