"""
Simulator endpoints: list built-in scenarios and render them to frame directories
"""
from typing import List

from fastapi import APIRouter, HTTPException, status

from app.config import data_path
from app.errors import SingleViewError
from app.models import RenderRequest, RenderResponse, ScenarioSummary
from app.vision.simulator import Scenario, builtin_scenario, builtin_scenarios, scaled, simulate

router = APIRouter()


def _summary(scenario: Scenario) -> ScenarioSummary:
    return ScenarioSummary(
        name=scenario.name,
        cameras=len(scenario.cameras),
        duration=scenario.duration,
        fps=scenario.fps,
        width=scenario.width,
        height=scenario.height,
        move_frames=[m.frame for m in scenario.rig_moves],
        occluders=len(scenario.occluders),
    )


def _lookup(name: str) -> Scenario:
    try:
        return builtin_scenario(name)
    except SingleViewError as e:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=e.to_record())


@router.get(
    "/",
    response_model=List[ScenarioSummary],
    summary="List built-in scenarios",
)
async def list_scenarios():
    """Built-in scenarios with their size, timeline and scripted events"""
    return [_summary(s) for s in builtin_scenarios().values()]


@router.get(
    "/{name}",
    response_model=Scenario,
    summary="Get a scenario definition",
    responses={404: {"description": "Scenario not found"}},
)
async def get_scenario(name: str):
    """Full scenario definition, the same JSON `simulate --scenario <file>` accepts"""
    return _lookup(name)


@router.post(
    "/{name}/render",
    response_model=RenderResponse,
    status_code=status.HTTP_201_CREATED,
    summary="Render a scenario",
    responses={
        201: {"description": "Frames and ground truth written"},
        404: {"description": "Scenario not found"},
        422: {"description": "Invalid scenario or scale"},
    },
)
def render_scenario(name: str, request: RenderRequest):
    """
    Render a built-in scenario to `<out_dir>/cam<k>/frame_%06d.png` with
    ground_truth.json and scenario.json.

    - **size** / **time**: scale image size and timeline (small test clips)
    """
    scenario = _lookup(name)
    out_dir = data_path(request.out_dir)
    try:
        scenario = scaled(scenario, request.size, request.time)
        frames, truth = simulate(scenario, out_dir, request.seed)
    except SingleViewError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.to_record())
    return RenderResponse(
        scenario=scenario.name,
        out_dir=str(out_dir),
        frames=len(frames),
        cameras=len(frames.camera_ids),
        move_frames=truth.move_frames,
    )
