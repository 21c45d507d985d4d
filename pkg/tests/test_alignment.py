"""
Correspondence accumulation, per-camera homographies and aligned bundles
"""
import numpy as np
import pytest

from app.errors import DegenerateConfiguration, InsufficientCorrespondences, InvalidParameter
from app.vision.alignment import (
    AlignedSequence,
    AlignmentState,
    SubSequence,
    accumulate_correspondences,
    align_stream,
    apply_alignment,
    compute_alignment,
)
from app.vision.features import valid_region_mask
from app.vision.frames import BundleList, FrameBundle
from app.vision.geometry import CorrespondenceSet, Homography, warp_points
from app.vision.simulator import render


def interior_grid(width=320, height=240, step=16):
    xs, ys = np.meshgrid(np.arange(0.1 * width, 0.9 * width, step), np.arange(0.1 * height, 0.9 * height, step))
    return np.column_stack([xs.ravel(), ys.ravel()])


def test_identical_streams_fill_on_first_frame(static_rig):
    """Identical views reach the target on frame 1 with dst = src"""
    frames, _ = render(static_rig)
    view = frames.view(0, 0)
    bundles = BundleList([FrameBundle(t=0, images=(view, view, view), camera_ids=(0, 1, 2))] * 3)
    acc = accumulate_correspondences(bundles, reference=0, target_count=20)
    assert acc.frames_used == 1
    for cam in (1, 2):
        assert acc.counts[cam] >= 20
        assert np.allclose(acc.sets[cam].src, acc.sets[cam].dst)

    state = compute_alignment(acc.sets, t_now=0)
    for h in state.maps.values():
        assert np.allclose(h.m, np.eye(3), atol=1e-6)


def test_accumulation_stops_at_max_frames(static_rig):
    """An unreachable target consumes exactly max_frames frames"""
    frames, _ = render(static_rig)
    acc = accumulate_correspondences(frames, target_count=100000, max_frames=4)
    assert acc.frames_used == 4
    for cam in (1, 2):
        assert len(acc.per_frame[cam]) == 4
        assert sum(acc.per_frame[cam]) == acc.counts[cam]


def test_blind_camera_is_reported(static_rig):
    """A camera that never sees texture fails accumulation by name"""
    frames, _ = render(static_rig)
    black = np.zeros_like(frames.view(0, 0))
    bundles = BundleList(
        [FrameBundle(t=t, images=(frames.view(t, 0), frames.view(t, 1), black), camera_ids=(0, 1, 2)) for t in range(3)]
    )
    with pytest.raises(InsufficientCorrespondences) as e:
        accumulate_correspondences(bundles, max_frames=3)
    assert e.value.context["cameras"] == [2]


def test_accumulation_preconditions(static_rig):
    frames, _ = render(static_rig)
    with pytest.raises(InvalidParameter):
        accumulate_correspondences(BundleList([]))
    with pytest.raises(InvalidParameter):
        accumulate_correspondences(frames, target_count=3)
    with pytest.raises(InvalidParameter):
        accumulate_correspondences(frames, reference=7)


def test_collinear_correspondences_name_the_camera():
    """A camera whose pairs lie on one line fails with its id attached"""
    square = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 100.0], [0.0, 100.0], [50.0, 20.0]])
    line = np.column_stack([np.arange(10.0) * 10, np.arange(10.0) * 5])
    corr = {1: CorrespondenceSet(square, square + 2.0), 2: CorrespondenceSet(line, line + 1.0)}
    with pytest.raises(DegenerateConfiguration) as e:
        compute_alignment(corr, t_now=5)
    assert e.value.context["camera"] == 2


def test_alignment_matches_ground_truth(static_rig):
    """Estimated maps reproject within 1 px of the plane-induced homographies"""
    frames, truth = render(static_rig)
    state = align_stream(frames, t_now=0, max_frames=10)
    assert state.valid_from == 0
    assert state.maps[0].is_identity()
    grid = interior_grid()
    for cam in (1, 2):
        err = np.linalg.norm(warp_points(state.maps[cam], grid) - warp_points(truth.homography(0, cam), grid), axis=1)
        assert err.mean() < 1.0, f"Camera {cam}: mean error {err.mean():.3f} px"


def test_identity_state_passes_bundles_through(static_rig):
    frames, _ = render(static_rig)
    bundle = frames[0]
    out = apply_alignment(AlignmentState.identity(bundle.camera_ids), bundle)
    for a, b in zip(out.images, bundle.images):
        assert np.array_equal(a, b)


def test_ground_truth_alignment_is_photometrically_consistent(static_rig):
    """Aligned views agree within 10 levels where both are visible"""
    frames, truth = render(static_rig)
    aligned = apply_alignment(truth.alignment_state(0), frames[0])
    views = [img.astype(np.float64) for img in aligned.images]
    masks = [valid_region_mask(img, erode=2) > 0 for img in aligned.images]
    for i in range(len(views)):
        for j in range(i + 1, len(views)):
            both = masks[i] & masks[j]
            assert both.mean() > 0.5
            mad = np.abs(views[i] - views[j])[both].mean()
            assert mad < 10, f"Views {i}/{j} differ by {mad:.2f} levels"


def test_translation_state_blackens_left_margin(static_rig):
    frames, _ = render(static_rig)
    state = AlignmentState(0, {0: Homography.identity(), 1: Homography.translation(5, 0), 2: Homography.identity()}, 0)
    out = apply_alignment(state, frames[0])
    shifted = out.image(1)
    assert not shifted[:, :5].any()
    assert np.array_equal(shifted[:, 5:], frames[0].image(1)[:, :-5])


def test_alignment_state_record_and_invariants():
    """The reference map must be the identity; records round-trip"""
    h = Homography.translation(3, -2)
    state = AlignmentState(1, {0: h, 1: Homography.identity()}, valid_from=12)
    again = AlignmentState.from_record(state.to_record())
    assert again.valid_from == 12 and again.reference_camera == 1
    assert np.allclose(again.maps[0].m, h.m)
    assert state.to_record()["maps"]["0"] == h.to_values()
    with pytest.raises(InvalidParameter):
        AlignmentState(0, {0: h, 1: Homography.identity()}, 0)
    with pytest.raises(InvalidParameter):
        AlignmentState(2, {0: h}, 0)


def test_aligned_sequence_picks_latest_state(moving_rig):
    """Each frame uses the newest state valid at or before it"""
    frames, truth = render(moving_rig)
    first, second = truth.alignment_state(0), truth.alignment_state(30)
    assert second.valid_from == 30
    aligned = AlignedSequence(frames, [second, first])
    assert aligned.state_for(0) is first
    assert aligned.state_for(29) is first
    assert aligned.state_for(30) is second
    assert aligned.state_for(89) is second
    assert len(aligned) == len(frames)
    assert aligned[35].t == 35

    window = SubSequence(aligned, 20, 25)
    assert len(window) == 5
    assert window.frame_id(0) == 20
    assert window[4].t == 24
    with pytest.raises(IndexError):
        window[5]
