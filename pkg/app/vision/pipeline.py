"""
Virtual single-view pipeline

align -> scan for t_c -> find t_h -> re-align -> ... -> score -> plan -> synthesize
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from app.config import PipelineConfig
from app.errors import InputMismatch, NoRehomingFound, SingleViewError
from app.vision.alignment import AlignedSequence, AlignmentState, SubSequence, align_stream
from app.vision.eventlog import EventLog
from app.vision.frames import FrameBundle, FrameDirectorySequence, write_sequence, write_video
from app.vision.movement import MovementScan, scan_movement
from app.vision.rehoming import scan_rehoming
from app.vision.selection import (
    SwitchSchedule,
    SynthesizedVideo,
    occlusion_score,
    plan_switches,
    round_robin_schedule,
    synthesize,
)
from app.vision.workers import parallel_map

logger = logging.getLogger(__name__)

Source = Union[str, Path, Sequence[FrameBundle]]


class AlignmentMode(str, Enum):
    """How z is aligned: full tracking, one initial calibration, or raw views"""
    AUTO = "auto"
    FIXED = "fixed"
    NONE = "none"


@dataclass
class PipelineResult:
    aligned: AlignedSequence
    output: SynthesizedVideo
    schedule: SwitchSchedule
    states: List[AlignmentState]
    log: EventLog


def open_source(source: Source, config: PipelineConfig) -> Sequence[FrameBundle]:
    """Frame directory or in-memory sequence, checked against the configuration"""
    frames = FrameDirectorySequence(source) if isinstance(source, (str, Path)) else source
    if len(frames) == 0:
        raise InputMismatch("Input has no frames")
    camera_ids = tuple(getattr(frames, "camera_ids", ()) or frames[0].camera_ids)
    if len(camera_ids) != config.camera_count:
        raise InputMismatch(
            "Camera count differs from configuration", expected=config.camera_count, found=len(camera_ids)
        )
    if config.alignment.reference_camera not in camera_ids:
        raise InputMismatch("Reference camera missing from input", reference=config.alignment.reference_camera)
    return frames


def align_at(
    source: Sequence[FrameBundle], config: PipelineConfig, t: int, workers: Optional[int] = None
) -> AlignmentState:
    """Accumulate from frame t onwards and fit every camera's homography"""
    window = SubSequence(source, t, t + config.alignment.max_frames)
    try:
        return align_stream(
            window,
            t,
            features=config.features,
            ransac=config.ransac,
            reference=config.alignment.reference_camera,
            target_count=config.alignment.target_count,
            max_frames=config.alignment.max_frames,
            workers=workers,
        )
    except SingleViewError as e:
        raise e.with_context(frame=t)


def track_alignment(
    source: Sequence[FrameBundle], config: PipelineConfig, log: EventLog, workers: Optional[int] = None
) -> List[AlignmentState]:
    """
    Alignment states over the whole stream.

    Each scan window covers at most window_frames from the cursor. A window
    without movement advances the cursor by half a window. A movement at t_c
    starts the re-homing scan after the settle delay; the re-alignment at t_h
    becomes the next state and the next window starts there.
    """
    total = len(source)
    states = [align_at(source, config, 0, workers)]
    log.alignment(states[0])

    window_frames = config.window_frames
    cursor = 0
    cache: Dict[int, np.ndarray] = {}
    while True:
        stop = min(total, cursor + window_frames)
        if stop - cursor < config.movement.window:
            logger.debug("Remaining frames [%d, %d) shorter than the smoothing window", cursor, stop)
            break
        window = SubSequence(AlignedSequence(source, [states[-1]]), cursor, stop)
        scan = scan_movement(window, config.movement, config.fps, config.features, workers, cache)
        log.misalignment(scan.series)
        if scan.event is None:
            if stop >= total:
                break
            cursor = max(cursor + 1, stop - window_frames // 2)
            continue

        log.movement(scan.event)
        from_t = scan.event.t_c + config.movement.settle_frames
        t_h, signals = (None, []) if from_t >= total else scan_rehoming(source, from_t, config.rehoming)
        if signals:
            log.area_agreement(from_t, signals)
        if t_h is None:
            error = NoRehomingFound("Stream ended before the views agreed", from_t=from_t, t_c=scan.event.t_c)
            log.no_rehoming(min(from_t, total - 1), error.to_record())
            logger.warning("No re-homing after movement at frame %d; keeping the stale alignment", scan.event.t_c)
            break

        log.rehoming(t_h)
        states.append(align_at(source, config, t_h, workers))
        log.alignment(states[-1])
        cache.clear()
        cursor = t_h
    return states


def score_stream(
    aligned: Sequence[FrameBundle], config: PipelineConfig, workers: Optional[int] = None
) -> np.ndarray:
    """(T, N) occlusion scores in bundle camera order"""
    rows = parallel_map(lambda t: occlusion_score(aligned[t], config.rehoming), range(len(aligned)), workers)
    return np.vstack(rows)


def run_pipeline(
    config: PipelineConfig,
    source: Source,
    out_dir: Optional[Union[str, Path]] = None,
    alignment_mode: Union[AlignmentMode, str] = AlignmentMode.AUTO,
    schedule: Optional[SwitchSchedule] = None,
    workers: Optional[int] = None,
) -> PipelineResult:
    """
    Produce the single-view stream z and its event log.

    Between a movement and its re-homing the previous alignment stays in
    use. A given schedule replaces occlusion-driven planning.
    """
    mode = AlignmentMode(alignment_mode)
    frames = open_source(source, config)
    camera_ids = tuple(getattr(frames, "camera_ids", ()) or frames[0].camera_ids)
    log = EventLog()

    if mode is AlignmentMode.NONE:
        states = [AlignmentState.identity(camera_ids, config.alignment.reference_camera)]
        log.alignment(states[0])
    elif mode is AlignmentMode.FIXED:
        states = [align_at(frames, config, 0, workers)]
        log.alignment(states[0])
    else:
        states = track_alignment(frames, config, log, workers)

    aligned = AlignedSequence(frames, states)
    if schedule is None:
        scores = score_stream(aligned, config, workers)
        schedule = plan_switches(scores, camera_ids, config.selection.min_dwell, config.selection.margin)
    log.schedule(schedule)
    output = synthesize(aligned, schedule)
    result = PipelineResult(aligned=aligned, output=output, schedule=schedule, states=states, log=log)
    logger.info(
        "Pipeline (%s): %d frames, %d alignment state(s), %d movement(s), %d segment(s)",
        mode.value,
        len(frames),
        len(states),
        len(log.movement_times()),
        len(schedule.segments),
    )
    if out_dir is not None:
        write_outputs(result, out_dir, config.write_aligned)
    return result


def write_outputs(result: PipelineResult, out_dir: Union[str, Path], write_aligned: bool = False) -> None:
    """z as `<out>/z/frame_%06d.png`, the log as `<out>/events.json`, optionally y under `<out>/y`"""
    out_dir = Path(out_dir)
    write_video(out_dir / "z", (result.output[t] for t in range(len(result.output))))
    result.log.write(out_dir / "events.json")
    if write_aligned:
        write_sequence(out_dir / "y", result.aligned)


def compare_modes(
    source: Source,
    config: PipelineConfig,
    schedule: Optional[SwitchSchedule] = None,
    workers: Optional[int] = None,
) -> Dict[str, PipelineResult]:
    """
    z for every alignment mode under one shared schedule (round-robin every
    frame by default) so the outputs differ only by alignment.
    """
    frames = open_source(source, config)
    camera_ids = tuple(getattr(frames, "camera_ids", ()) or frames[0].camera_ids)
    schedule = schedule or round_robin_schedule(len(frames), camera_ids, 1)
    return {
        mode.value: run_pipeline(config, frames, alignment_mode=mode, schedule=schedule, workers=workers)
        for mode in AlignmentMode
    }


def detect_moves(source: Source, config: PipelineConfig, workers: Optional[int] = None) -> MovementScan:
    """Movement scan of the first window under the initial alignment, without re-homing"""
    frames = open_source(source, config)
    state = align_at(frames, config, 0, workers)
    window = SubSequence(AlignedSequence(frames, [state]), 0, config.window_frames)
    return scan_movement(window, config.movement, config.fps, config.features, workers)
