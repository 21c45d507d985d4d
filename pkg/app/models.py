"""
Data models for pipeline runs and their event records
"""
import json
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from sqlmodel import Field, SQLModel

from app.vision.eventlog import EventKind
from app.vision.pipeline import AlignmentMode


class RunStatus(str, Enum):
    """Pipeline run status enum"""
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


class PipelineRun(SQLModel, table=True):
    """
    One pipeline execution over a frame directory

    Constraints:
    - status: constrained to RunStatus values, PENDING -> RUNNING -> COMPLETED | FAILED
    - config_json: the validated PipelineConfig as JSON text
    - error_json: the machine-readable error record of a failed run
    """
    id: Optional[int] = Field(default=None, primary_key=True)
    input_dir: str = Field(description="Directory with cam<k>/frame_%06d.png")
    output_dir: str = Field(description="Directory receiving z/ and events.json")
    alignment_mode: AlignmentMode = Field(default=AlignmentMode.AUTO)
    status: RunStatus = Field(default=RunStatus.PENDING, index=True, description="Run status")
    config_json: str = Field(default="{}")
    n_frames: Optional[int] = Field(default=None, ge=0)
    n_movements: int = Field(default=0, ge=0)
    error_json: Optional[str] = Field(default=None)
    created_at: datetime = Field(default_factory=datetime.utcnow, description="Run creation timestamp")
    finished_at: Optional[datetime] = Field(default=None)

    # status is indexed for filtering


class RunEvent(SQLModel, table=True):
    """One EventLog record of a run, payload stored as JSON text"""
    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: int = Field(foreign_key="pipelinerun.id", index=True, description="Run ID")
    seq: int = Field(ge=0, description="Position in the event log")
    kind: EventKind = Field(index=True)
    t: int = Field(ge=0, description="Frame the record refers to")
    payload_json: str = Field(default="{}")


# Pydantic models for request/response
class RunCreate(SQLModel):
    """Run creation request model"""
    input_dir: str
    output_dir: str
    alignment_mode: AlignmentMode = AlignmentMode.AUTO
    config: Optional[Dict[str, Any]] = None

    class Config:
        json_schema_extra = {
            "example": {
                "input_dir": "data/one-move",
                "output_dir": "out/one-move",
                "alignment_mode": "auto",
                "config": {"fps": 30, "movement": {"runs": 5}},
            }
        }


class RunUpdate(SQLModel):
    """Run status update request model"""
    status: RunStatus


class RunResponse(SQLModel):
    """Run response model"""
    id: int
    input_dir: str
    output_dir: str
    alignment_mode: AlignmentMode
    status: RunStatus
    n_frames: Optional[int] = None
    n_movements: int
    error: Optional[Dict[str, Any]] = None
    created_at: datetime
    finished_at: Optional[datetime] = None

    @classmethod
    def from_run(cls, run: PipelineRun) -> "RunResponse":
        data = run.model_dump(exclude={"config_json", "error_json"})
        data["error"] = json.loads(run.error_json) if run.error_json else None
        return cls(**data)


class RunEventResponse(SQLModel):
    """Event record response model"""
    seq: int
    kind: EventKind
    t: int
    payload: Dict[str, Any]

    @classmethod
    def from_event(cls, event: RunEvent) -> "RunEventResponse":
        return cls(seq=event.seq, kind=event.kind, t=event.t, payload=json.loads(event.payload_json))


class ScenarioSummary(SQLModel):
    """Built-in scenario listing"""
    name: str
    cameras: int
    duration: int
    fps: float
    width: int
    height: int
    move_frames: List[int]
    occluders: int


class RenderRequest(SQLModel):
    """Scenario render request model"""
    out_dir: str
    seed: int = Field(default=0, ge=0)
    size: float = Field(default=1.0, gt=0, description="Image size scale")
    time: float = Field(default=1.0, gt=0, description="Timeline scale")


class RenderResponse(SQLModel):
    scenario: str
    out_dir: str
    frames: int
    cameras: int
    move_frames: List[int]


class EvaluateRequest(SQLModel):
    """Metrics request model"""
    video_dir: str
    baseline_dir: Optional[str] = None
    include_trace: bool = False
    config: Optional[Dict[str, Any]] = Field(default=None, description="PipelineConfig overrides; only the metrics section is used")
