"""
Stabilisation metrics endpoint
"""
from fastapi import APIRouter, HTTPException, status

from app.config import data_path, load_config
from app.errors import SingleViewError
from app.models import EvaluateRequest
from app.vision.frames import ImageDirectory
from app.vision.metrics import evaluate

router = APIRouter()


@router.post(
    "/evaluate",
    summary="Evaluate ITF and AvSpeed of a single-view video",
    responses={
        200: {"description": "Metrics report"},
        404: {"description": "Video directory not found"},
        422: {"description": "Invalid config, too few frames, size mismatch or nothing trackable"},
    },
)
def evaluate_video_dir(request: EvaluateRequest):
    """
    Report ITF (dB) and AvSpeed (px/frame) of `<video_dir>/frame_%06d.png`.

    With **baseline_dir** both reports are returned with `itf_gain` and
    `avspeed_ratio`; **include_trace** adds per-transition PSNR and
    displacement. **config** carries the same overrides a run accepts;
    its metrics section sets the PSNR cap and tracker.
    """
    try:
        settings = load_config(request.config or {}).metrics
    except SingleViewError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.to_record())

    dirs = [request.video_dir] + ([request.baseline_dir] if request.baseline_dir else [])
    for d in dirs:
        if not data_path(d).is_dir():
            raise HTTPException(
                status_code=status.HTTP_404_NOT_FOUND,
                detail={"error": "InputMismatch", "message": "Video directory does not exist", "path": d},
            )
    try:
        video = ImageDirectory(data_path(request.video_dir))
        baseline = ImageDirectory(data_path(request.baseline_dir)) if request.baseline_dir else None
        return evaluate(video, baseline, settings, include_trace=request.include_trace)
    except SingleViewError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.to_record())
