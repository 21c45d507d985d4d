"""
Pipeline run endpoints
"""
import json
import logging
from datetime import datetime
from typing import List, Optional

from fastapi import APIRouter, Depends, HTTPException, status
from sqlmodel import Session, select

from app.config import data_path, load_config
from app.database import get_session
from app.errors import SingleViewError
from app.models import PipelineRun, RunCreate, RunEvent, RunEventResponse, RunResponse, RunStatus, RunUpdate
from app.vision.eventlog import EventKind
from app.vision.pipeline import run_pipeline

router = APIRouter()
logger = logging.getLogger(__name__)


def validate_status_transition(current_status: RunStatus, new_status: RunStatus) -> bool:
    """
    Validate run status transitions.

    Allowed transitions:
    - PENDING -> RUNNING, FAILED
    - RUNNING -> COMPLETED, FAILED
    - COMPLETED -> (terminal)
    - FAILED -> (terminal)
    """
    valid_transitions = {
        RunStatus.PENDING: [RunStatus.RUNNING, RunStatus.FAILED],
        RunStatus.RUNNING: [RunStatus.COMPLETED, RunStatus.FAILED],
        RunStatus.COMPLETED: [],
        RunStatus.FAILED: [],
    }
    if current_status == new_status:
        return True
    return new_status in valid_transitions.get(current_status, [])


def _transition(session: Session, run: PipelineRun, new_status: RunStatus) -> None:
    if not validate_status_transition(run.status, new_status):
        raise HTTPException(
            status_code=status.HTTP_409_CONFLICT,
            detail={
                "error": "Invalid status transition",
                "current_status": run.status.value,
                "requested_status": new_status.value,
                "run_id": run.id,
            },
        )
    run.status = new_status
    if new_status in (RunStatus.COMPLETED, RunStatus.FAILED):
        run.finished_at = datetime.utcnow()
    session.add(run)
    session.commit()
    session.refresh(run)


def _get_run(session: Session, run_id: int) -> PipelineRun:
    run = session.get(PipelineRun, run_id)
    if not run:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=f"Run with ID {run_id} not found")
    return run


@router.post(
    "/",
    response_model=RunResponse,
    status_code=status.HTTP_201_CREATED,
    summary="Run the pipeline on a frame directory",
    response_description="The completed run",
    responses={
        201: {"description": "Run completed; z and events.json written"},
        404: {"description": "Input directory not found"},
        422: {"description": "Invalid configuration or pipeline failure"},
    },
)
def create_run(run_request: RunCreate, session: Session = Depends(get_session)):
    """
    Execute the pipeline synchronously and store its event log.

    - **input_dir**: directory with `cam<k>/frame_%06d.png`
    - **output_dir**: receives `z/frame_%06d.png` and `events.json`
    - **alignment_mode**: auto | fixed | none
    - **config**: PipelineConfig overrides (defaults otherwise)

    A failing pipeline leaves the run FAILED with its error record and
    returns 422.
    """
    input_dir = data_path(run_request.input_dir)
    if not input_dir.is_dir():
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail={"error": "InputMismatch", "message": "Input directory does not exist", "path": str(input_dir)},
        )
    try:
        config = load_config(run_request.config or {})
    except SingleViewError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.to_record())

    run = PipelineRun(
        input_dir=str(input_dir),
        output_dir=str(data_path(run_request.output_dir)),
        alignment_mode=run_request.alignment_mode,
        config_json=config.model_dump_json(),
    )
    session.add(run)
    session.commit()
    session.refresh(run)
    _transition(session, run, RunStatus.RUNNING)

    try:
        result = run_pipeline(config, input_dir, run.output_dir, alignment_mode=run.alignment_mode)
    except SingleViewError as e:
        logger.warning("Run %d failed: %s", run.id, e)
        run.error_json = json.dumps(e.to_record())
        _transition(session, run, RunStatus.FAILED)
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail={**e.to_record(), "run_id": run.id}
        )

    for seq, record in enumerate(result.log.to_records()):
        session.add(
            RunEvent(
                run_id=run.id,
                seq=seq,
                kind=EventKind(record["kind"]),
                t=record["t"],
                payload_json=json.dumps(record["payload"]),
            )
        )
    run.n_frames = len(result.output)
    run.n_movements = len(result.log.movement_times())
    _transition(session, run, RunStatus.COMPLETED)
    return RunResponse.from_run(run)


@router.get(
    "/{run_id}",
    response_model=RunResponse,
    summary="Get a run by ID",
    responses={404: {"description": "Run not found"}},
)
async def get_run(run_id: int, session: Session = Depends(get_session)):
    """Run status, counts and, for failed runs, the error record"""
    return RunResponse.from_run(_get_run(session, run_id))


@router.get(
    "/",
    response_model=List[RunResponse],
    summary="List runs",
)
async def list_runs(
    skip: int = 0,
    limit: int = 100,
    status_filter: Optional[RunStatus] = None,
    session: Session = Depends(get_session),
):
    """
    Retrieve runs with optional status filter.

    - **skip**: Number of runs to skip (for pagination)
    - **limit**: Maximum number of runs to return (default: 100)
    - **status_filter**: Filter by run status (optional)
    """
    statement = select(PipelineRun)
    if status_filter:
        statement = statement.where(PipelineRun.status == status_filter)
    statement = statement.offset(skip).limit(limit)
    return [RunResponse.from_run(r) for r in session.exec(statement).all()]


@router.get(
    "/{run_id}/events",
    response_model=List[RunEventResponse],
    summary="List a run's event records",
    responses={404: {"description": "Run not found"}},
)
async def list_run_events(
    run_id: int,
    kind: Optional[EventKind] = None,
    session: Session = Depends(get_session),
):
    """Event log of a run in order, optionally only one kind (movement, rehoming, ...)"""
    _get_run(session, run_id)
    statement = select(RunEvent).where(RunEvent.run_id == run_id)
    if kind:
        statement = statement.where(RunEvent.kind == kind)
    statement = statement.order_by(RunEvent.seq)
    return [RunEventResponse.from_event(e) for e in session.exec(statement).all()]


@router.put(
    "/{run_id}",
    response_model=RunResponse,
    summary="Update a run's status",
    responses={
        404: {"description": "Run not found"},
        409: {"description": "Invalid status transition"},
    },
)
def update_run(run_id: int, run_update: RunUpdate, session: Session = Depends(get_session)):
    """
    Change a run's status, e.g. mark an interrupted RUNNING run FAILED.

    Valid status transitions:
    - PENDING -> RUNNING, FAILED
    - RUNNING -> COMPLETED, FAILED
    - COMPLETED, FAILED -> (terminal)

    Returns 409 if the transition is invalid.
    """
    run = _get_run(session, run_id)
    _transition(session, run, run_update.status)
    return RunResponse.from_run(run)
