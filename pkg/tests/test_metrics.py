"""
PSNR, ITF, keypoint tracking and AvSpeed
"""
import numpy as np
import pytest

from app.config import MetricsSettings
from app.errors import DimensionMismatch, NoTrackablePoints, TooFewFrames
from app.vision.metrics import (
    PSNR_CAP,
    MetricsReport,
    avspeed,
    evaluate,
    itf,
    psnr,
    track_points,
)
from app.vision.simulator import render


@pytest.fixture
def texture(static_rig):
    frames, _ = render(static_rig)
    return frames.view(0, 0)


def translating(base: np.ndarray, k: int, frames: int = 8, width: int = 200, height: int = 160) -> list:
    """Crops whose content moves k px right per frame"""
    x0 = 20 + k * frames
    return [np.ascontiguousarray(base[40 : 40 + height, x0 - k * t : x0 - k * t + width]) for t in range(frames)]


def test_psnr_fixtures():
    """Identical frames hit the cap, a +16 offset gives 24.05 dB, black/white gives 0 dB"""
    a = np.full((32, 32, 3), 100, np.uint8)
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 16) == pytest.approx(24.05, abs=0.01)
    black, white = np.zeros_like(a), np.full_like(a, 255)
    assert psnr(black, white) == pytest.approx(0.0, abs=1e-6)


def test_psnr_is_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        b = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        value = psnr(a, b)
        assert value == psnr(b, a)
        assert 0.0 <= value <= PSNR_CAP


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        psnr(np.zeros((4, 4, 3), np.uint8), np.zeros((4, 5, 3), np.uint8))


def test_itf():
    still = [np.full((16, 16, 3), 80, np.uint8)] * 4
    assert itf(still) == PSNR_CAP
    flicker = [np.zeros((16, 16, 3), np.uint8) if t % 2 else np.full((16, 16, 3), 255, np.uint8) for t in range(5)]
    assert itf(flicker) == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(TooFewFrames):
        itf(still[:1])


def test_avspeed_static_video_is_zero(texture):
    video = [texture] * 5
    assert avspeed(video) == 0.0


def test_avspeed_one_pixel_translation(texture):
    """Content moving 1 px per frame tracks at 1.0 +- 0.1 px/frame"""
    value = avspeed(translating(texture, 1))
    assert value == pytest.approx(1.0, abs=0.1)


@pytest.mark.parametrize("k", [2, 3, 5])
def test_avspeed_follows_global_shift(texture, k):
    """A constant shift of k px/frame reads as k within 10%"""
    value = avspeed(translating(texture, k))
    assert value == pytest.approx(k, rel=0.1)


def test_tracking_replenishes_lost_tracks(texture):
    """Cutting to unrelated content drops tracks and seeds new ones"""
    first = np.ascontiguousarray(texture[0:160, 0:200])
    other = np.ascontiguousarray(np.rot90(texture)[100:260, 20:220])
    steady = track_points([first] * 6)
    cut = track_points([first] * 3 + [other] * 3)
    assert cut.tracks > steady.tracks
    assert len(cut.per_transition) == 5
    assert steady.avspeed == 0.0


def test_tracking_preconditions(texture):
    with pytest.raises(TooFewFrames):
        track_points([texture])
    with pytest.raises(NoTrackablePoints):
        track_points([np.full((64, 64, 3), 90, np.uint8)] * 3)


def test_evaluate_report_and_baseline(texture):
    still = [np.ascontiguousarray(texture[40:200, 20:220])] * 6
    moving = translating(texture, 2, frames=6)

    report = evaluate(still)
    assert report["itf_db"] == PSNR_CAP
    assert report["avspeed"] == 0.0
    assert report["n_frames"] == 6 and report["n_tracked_points"] > 0

    compared = evaluate(still, baseline=moving, include_trace=True)
    assert compared["video"]["itf_db"] == PSNR_CAP
    assert compared["itf_gain"] > 1.0
    assert compared["avspeed_ratio"] == 0.0
    assert len(compared["trace"]) == 5
    assert set(compared["trace"][0]) == {"t", "psnr_db", "displacement"}


def test_evaluate_needs_trackable_content():
    """Flat frames have a PSNR but nothing to track"""
    flicker = [np.zeros((40, 40, 3), np.uint8), np.full((40, 40, 3), 255, np.uint8)]
    with pytest.raises(NoTrackablePoints):
        evaluate(flicker, settings=MetricsSettings(psnr_cap=50.0))


def test_itf_cap_is_configurable():
    still = [np.full((40, 40, 3), 7, np.uint8)] * 2
    assert itf(still, cap=50.0) == 50.0


def test_report_validation():
    with pytest.raises(ValueError):
        MetricsReport.model_validate({"itf_db": -1.0, "avspeed": 0.0, "n_frames": 2, "n_tracked_points": 0})
