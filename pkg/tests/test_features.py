"""
Keypoint detection and matching
"""
import numpy as np
import pytest

from app.config import FeatureSettings
from app.errors import EmptySet, ImageTooSmall, InvalidParameter
from app.vision.features import (
    KeypointSet,
    detect_and_describe,
    match_descriptors,
    match_within_radius,
    valid_region_mask,
)
from app.vision.geometry import warp_points
from app.vision.simulator import render


def random_set(rng, n=40, dims=128) -> KeypointSet:
    return KeypointSet.from_arrays(rng.uniform(0, 300, (n, 2)), rng.uniform(0, 1, (n, dims)))


def test_uniform_image_has_no_keypoints():
    """No structure, no extrema"""
    kp = detect_and_describe(np.full((64, 64, 3), 128, np.uint8))
    assert len(kp) == 0
    assert kp.descriptors.shape == (0, 128)


def test_small_image_rejected():
    with pytest.raises(ImageTooSmall):
        detect_and_describe(np.zeros((31, 64, 3), np.uint8))


def test_rendered_view_has_keypoints(static_rig):
    """The simulator texture is feature-rich and output is capped and sorted"""
    frames, _ = render(static_rig)
    view = frames.view(0, 0)
    kp = detect_and_describe(view)
    assert len(kp) >= 50, f"Expected >= 50 keypoints, got {len(kp)}"
    assert np.all(np.diff(kp.responses) <= 0), "Keypoints must be sorted by response"
    assert np.all(kp.scales > 0) and np.all(kp.responses >= 0)

    capped = detect_and_describe(view, FeatureSettings(max_keypoints=20))
    assert len(capped) == 20
    assert np.array_equal(capped.positions, kp.positions[:20])


def test_detection_is_deterministic(static_rig):
    frames, _ = render(static_rig)
    a = detect_and_describe(frames.view(3, 1))
    b = detect_and_describe(frames.view(3, 1))
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.descriptors, b.descriptors)


def test_detection_translation_covariant(static_rig):
    """Cropping 16 px further in shifts keypoints by 16 px"""
    frames, _ = render(static_rig)
    view = frames.view(0, 0)
    a = detect_and_describe(view[0:200, 0:280])
    b = detect_and_describe(view[16:216, 16:296])

    inner = (
        (b.positions[:, 0] >= 40) & (b.positions[:, 0] < 220) & (b.positions[:, 1] >= 40) & (b.positions[:, 1] < 140)
    ) & (b.scales < 20)
    assert inner.sum() >= 10
    expected = b.positions[inner] + 16.0
    nearest = np.sqrt(((expected[:, None, :] - a.positions[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    assert (nearest <= 0.5).mean() >= 0.7, f"Only {(nearest <= 0.5).mean():.2f} of keypoints followed the shift"


def test_detection_rotation_invariant(static_rig):
    """A 90-degree rotation keeps most keypoints matchable at their rotated positions"""
    frames, _ = render(static_rig)
    view = frames.view(0, 0)
    rotated = np.ascontiguousarray(np.rot90(view))
    a = detect_and_describe(view)
    b = detect_and_describe(rotated)
    matches = match_descriptors(a, b, 0.75)

    # np.rot90 maps (x, y) to (y, W - 1 - x)
    width = view.shape[1]
    pa = a.positions[matches.index_a]
    expected = np.column_stack([pa[:, 1], width - 1 - pa[:, 0]])
    correct = np.linalg.norm(expected - b.positions[matches.index_b], axis=1) <= 2.0
    assert correct.mean() >= 0.9
    assert correct.sum() >= 0.3 * len(a), f"{correct.sum()} of {len(a)} keypoints matched under rotation"


def test_self_match():
    """Every keypoint matches itself at distance 0"""
    rng = np.random.default_rng(0)
    a = random_set(rng)
    m = match_descriptors(a, a, 0.8)
    assert len(m) == len(a)
    assert np.array_equal(m.index_a, m.index_b)
    assert np.all(m.distance == 0)


def test_matching_permutation_invariant():
    """Permuting b's order permutes the matches and nothing else"""
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = random_set(rng, 30)
        b = KeypointSet.from_arrays(a.positions, a.descriptors + rng.normal(0, 0.05, a.descriptors.shape))
        perm = rng.permutation(len(b))
        plain = match_descriptors(a, b)
        permuted = match_descriptors(a, b.subset(perm))
        assert sorted(zip(plain.index_a, plain.index_b)) == sorted(zip(permuted.index_a, perm[permuted.index_b]))


def test_matching_is_symmetric():
    rng = np.random.default_rng(2)
    a = random_set(rng, 50)
    b = KeypointSet.from_arrays(a.positions, a.descriptors + rng.normal(0, 0.1, a.descriptors.shape))
    ab = match_descriptors(a, b)
    ba = match_descriptors(b, a)
    assert sorted(zip(ab.index_a, ab.index_b)) == sorted(zip(ba.index_b, ba.index_a))
    assert len(set(ab.index_a.tolist())) == len(ab)


def test_matching_preconditions():
    rng = np.random.default_rng(3)
    with pytest.raises(EmptySet):
        match_descriptors(KeypointSet.empty(), random_set(rng))
    with pytest.raises(InvalidParameter):
        match_descriptors(random_set(rng), random_set(rng), ratio=1.0)


def test_simulator_views_match_under_ground_truth(static_rig):
    """Two views of the plane: >= 30 matches, >= 90% within 3 px of the true map"""
    frames, truth = render(static_rig)
    kp0 = detect_and_describe(frames.view(0, 0))
    kp1 = detect_and_describe(frames.view(0, 1))
    m = match_descriptors(kp1, kp0)
    assert len(m) >= 30, f"Expected >= 30 matches, got {len(m)}"
    predicted = warp_points(truth.homography(0, 1), kp1.positions[m.index_a])
    err = np.linalg.norm(predicted - kp0.positions[m.index_b], axis=1)
    assert (err <= 3.0).mean() >= 0.9


def test_match_within_radius_gates_candidates():
    """Only targets inside the radius are considered; targets are used once"""
    rng = np.random.default_rng(4)
    grid = np.array([(30.0 * i, 30.0 * j) for i in range(5) for j in range(4)])
    a = KeypointSet.from_arrays(grid, rng.uniform(0, 1, (len(grid), 128)))
    shifted = KeypointSet.from_arrays(a.positions + [3.0, 0.0], a.descriptors)
    near = match_within_radius(a, shifted, radius=5.0)
    assert len(near) == len(a)
    assert np.array_equal(near.index_a, near.index_b)

    far = KeypointSet.from_arrays(a.positions + [100.0, 0.0], a.descriptors)
    assert len(match_within_radius(a, far, radius=5.0)) == 0
    assert len(match_within_radius(a, KeypointSet.empty(), radius=5.0)) == 0


def test_valid_region_mask_erodes_black_border():
    img = np.zeros((40, 40, 3), np.uint8)
    img[:, 10:] = 100
    mask = valid_region_mask(img, erode=2)
    assert not mask[:, :12].any()
    assert mask[5:35, 15:35].all()
