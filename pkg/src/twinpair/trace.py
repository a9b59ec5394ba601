"""Run traces: one CSV row per physical-twin step, plus an event log.

Columns, in order:

time                   virtual clock, start_time + step * dt, HH:MM:SS
heartbeat              last digital-twin counter the physical twin accepted
pt_target_velocity     command actually applied to the plant this step
pt_target_acceleration
dt_target_velocity     digital-side command computed FROM this step's data
dt_target_acceleration
step
twin_mode
acc_source
pt_velocity            plant velocity after the step

The digital-side columns are aligned by provenance, not by arrival: every
remote command carries the physical step its inputs came from, and the
recorder slots it into that row.  Rows whose matching command never
arrived (the pipeline is still in flight when the run ends, or the peer
is gone) hold the last known value forward, zeros before the first one.

Floats are written with repr so they round-trip bit for bit; two runs of
the same scenario produce byte-identical files.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import dataclass
from typing import Dict, List, Tuple

COLUMNS = [
    "time",
    "heartbeat",
    "pt_target_velocity",
    "pt_target_acceleration",
    "dt_target_velocity",
    "dt_target_acceleration",
    "step",
    "twin_mode",
    "acc_source",
    "pt_velocity",
]


def _format_cell(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class _Draft:
    step: int
    heartbeat: int
    applied_vel: float
    applied_accel: float
    mode: str
    source: str
    velocity: float


class TraceRecorder:
    def __init__(self, start_time: str, dt: float) -> None:
        self.start = _dt.datetime.strptime(start_time, "%H:%M:%S")
        self.dt = dt
        self._drafts: List[_Draft] = []
        self._fills: Dict[int, Tuple[float, float]] = {}

    def draft_row(
        self,
        step: int,
        heartbeat: int,
        applied_vel: float,
        applied_accel: float,
        mode: str,
        source: str,
        velocity: float,
    ) -> None:
        self._drafts.append(
            _Draft(step, heartbeat, applied_vel, applied_accel, mode, source, velocity)
        )

    def record_fill(self, basis_step: int, target_vel: float, target_accel: float) -> None:
        """File a remote command under the physical step it was computed from."""
        if basis_step < 0:
            return
        self._fills[basis_step] = (target_vel, target_accel)

    def _time_for(self, step: int) -> str:
        moment = self.start + _dt.timedelta(seconds=step * self.dt)
        return moment.strftime("%H:%M:%S")

    def rows(self) -> List[Dict[str, object]]:
        out: List[Dict[str, object]] = []
        carry = (0.0, 0.0)
        for draft in self._drafts:
            carry = self._fills.get(draft.step, carry)
            out.append(
                {
                    "time": self._time_for(draft.step),
                    "heartbeat": draft.heartbeat,
                    "pt_target_velocity": draft.applied_vel,
                    "pt_target_acceleration": draft.applied_accel,
                    "dt_target_velocity": carry[0],
                    "dt_target_acceleration": carry[1],
                    "step": draft.step,
                    "twin_mode": draft.mode,
                    "acc_source": draft.source,
                    "pt_velocity": draft.velocity,
                }
            )
        return out


def write_trace(path: str, rows: List[Dict[str, object]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row[col]) for col in COLUMNS])


_INT_COLUMNS = {"heartbeat", "step"}
_FLOAT_COLUMNS = {
    "pt_target_velocity",
    "pt_target_acceleration",
    "dt_target_velocity",
    "dt_target_acceleration",
    "pt_velocity",
}


def read_trace(path: str) -> List[Dict[str, object]]:
    rows: List[Dict[str, object]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"{path} is not a trace file (columns {reader.fieldnames})")
        for raw in reader:
            row: Dict[str, object] = {}
            for col in COLUMNS:
                text = raw[col]
                if col in _INT_COLUMNS:
                    row[col] = int(text)
                elif col in _FLOAT_COLUMNS:
                    row[col] = float(text)
                else:
                    row[col] = text
            rows.append(row)
    return rows


class EventLog:
    """Ordered, deterministic record of notable run events."""

    def __init__(self) -> None:
        self.events: List[Dict[str, object]] = []

    def add(self, step: int, kind: str, **detail: object) -> None:
        event: Dict[str, object] = {"step": step, "kind": kind}
        event.update(detail)
        self.events.append(event)

    def write_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            for event in self.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")


def events_path_for(trace_path: str) -> str:
    return trace_path + ".events.jsonl"
