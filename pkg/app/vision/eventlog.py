"""
Pipeline event log: ordered, JSON-serialisable records of alignment states,
D_t series, movements, area-agreement samples, re-homing times and the
final switch schedule.
"""
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from sqlmodel import Field, SQLModel

from app.errors import InvalidParameter
from app.vision.alignment import AlignmentState
from app.vision.movement import MisalignmentSeries, MovementEvent
from app.vision.rehoming import RehomingSignal
from app.vision.selection import SwitchSchedule

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    ALIGNMENT = "alignment"
    MISALIGNMENT = "misalignment"
    MOVEMENT = "movement"
    AREA_AGREEMENT = "area_agreement"
    REHOMING = "rehoming"
    NO_REHOMING = "no_rehoming"
    SCHEDULE = "schedule"


class EventRecord(SQLModel):
    kind: EventKind
    t: int = Field(ge=0, description="Frame the record refers to")
    payload: Dict[str, Any] = Field(default_factory=dict)


class EventLog:
    """Append-only list of records with non-decreasing frame stamps"""

    def __init__(self, records: Optional[Iterable[EventRecord]] = None):
        self.records: List[EventRecord] = []
        for record in records or ():
            self.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: EventRecord) -> EventRecord:
        if self.records and record.t < self.records[-1].t:
            raise InvalidParameter(
                "Event log stamps must not decrease",
                kind=record.kind.value,
                t=record.t,
                previous=self.records[-1].t,
            )
        self.records.append(record)
        return record

    def add(self, kind: EventKind, t: int, **payload: Any) -> EventRecord:
        return self.append(EventRecord(kind=kind, t=t, payload=payload))

    def alignment(self, state: AlignmentState) -> EventRecord:
        return self.add(EventKind.ALIGNMENT, state.valid_from, **state.to_record())

    def misalignment(self, series: MisalignmentSeries) -> EventRecord:
        t = int(series.frames[0]) if len(series) else (self.records[-1].t if self.records else 0)
        return self.add(EventKind.MISALIGNMENT, t, **series.to_record())

    def movement(self, event: MovementEvent) -> EventRecord:
        return self.add(EventKind.MOVEMENT, event.t_c, **event.to_record())

    def area_agreement(self, from_t: int, signals: Sequence[RehomingSignal]) -> EventRecord:
        return self.add(EventKind.AREA_AGREEMENT, from_t, samples=[s.to_record() for s in signals])

    def rehoming(self, t_h: int) -> EventRecord:
        return self.add(EventKind.REHOMING, t_h, t_h=t_h)

    def no_rehoming(self, from_t: int, error: Dict[str, Any]) -> EventRecord:
        return self.add(EventKind.NO_REHOMING, from_t, **error)

    def schedule(self, schedule: SwitchSchedule) -> EventRecord:
        return self.add(EventKind.SCHEDULE, schedule.length - 1, **schedule.to_record())

    def of_kind(self, kind: EventKind) -> List[EventRecord]:
        return [r for r in self.records if r.kind == kind]

    def movement_times(self) -> List[int]:
        return [r.t for r in self.of_kind(EventKind.MOVEMENT)]

    def rehoming_times(self) -> List[int]:
        return [r.t for r in self.of_kind(EventKind.REHOMING)]

    def alignment_states(self) -> List[AlignmentState]:
        return [AlignmentState.from_record(r.payload) for r in self.of_kind(EventKind.ALIGNMENT)]

    def check_invariants(self) -> None:
        """Stamps never decrease; every movement is answered before the next one"""
        open_movement: Optional[int] = None
        previous = -1
        for record in self.records:
            if record.t < previous:
                raise InvalidParameter("Event log stamps decrease", t=record.t, previous=previous)
            previous = record.t
            if record.kind == EventKind.MOVEMENT:
                if open_movement is not None:
                    raise InvalidParameter("Movement without re-homing outcome", t_c=open_movement)
                open_movement = record.t
            elif record.kind in (EventKind.REHOMING, EventKind.NO_REHOMING):
                if open_movement is None:
                    raise InvalidParameter("Re-homing outcome without a movement", t=record.t)
                if record.kind == EventKind.REHOMING and record.t <= open_movement:
                    raise InvalidParameter("Re-homing must follow its movement", t_c=open_movement, t_h=record.t)
                open_movement = None

    def to_records(self) -> List[dict]:
        return [r.model_dump(mode="json") for r in self.records]

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "EventLog":
        return cls(EventRecord.model_validate(r) for r in records)

    def write(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"records": self.to_records()}, indent=1))
        logger.info("Wrote %d event records to %s", len(self.records), path)

    @classmethod
    def read(cls, path: Union[str, Path]) -> "EventLog":
        return cls.from_records(json.loads(Path(path).read_text())["records"])
