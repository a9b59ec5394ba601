"""Scenario files: a scripted timeline plus assertions over the trace.

A scenario is JSON.  Top level:

name            free text
config          "augmentation" or "redundancy"
dt              step size in seconds (default 0.1)
duration_steps  how many physical-twin steps to run
start_time      virtual clock origin, "HH:MM:SS" (default "08:00:00")
dt_offline      run without any digital twin at all (default false)
params          overrides for controller/protocol parameters
events          list, sorted by "at" (step number)
assertions      list of checks evaluated against the finished trace

Event actions: activateAcc, deactivateAcc, placeObstacle (zone, distance),
removeObstacle (zone), injectFault (twin, unit), label.  Any event may
carry a "label" that assertions can reference instead of a step number.

Checks: velocityZeroWithin (after, steps), velocityPositiveThroughout
(from, to), heartbeatFrozenAfter (after), accSourceIs (source, from, to),
modeIs (mode, from, to).

Validation is eager and loud: a scenario that references an unknown zone,
an unsorted timeline, or a window outside the run fails at load time.
Evaluation never guesses: a window the trace does not cover comes back
"unevaluable" rather than silently passing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Union

from .rover import ZONES, AccParams, acc_params_from
from .simcore import SimError

ACTIONS = (
    "activateAcc",
    "deactivateAcc",
    "placeObstacle",
    "removeObstacle",
    "injectFault",
    "label",
)
CHECKS = (
    "velocityZeroWithin",
    "velocityPositiveThroughout",
    "heartbeatFrozenAfter",
    "accSourceIs",
    "modeIs",
)
CONFIGS = ("augmentation", "redundancy")
TWINS = ("pt", "dt")


class ScenarioError(SimError):
    pass


@dataclass(frozen=True)
class Event:
    at: int
    action: str
    zone: Optional[str] = None
    distance: Optional[float] = None
    twin: Optional[str] = None
    unit: Optional[str] = None
    label: Optional[str] = None


@dataclass(frozen=True)
class Assertion:
    check: str
    params: Dict[str, object]

    def describe(self) -> str:
        detail = " ".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.check} {detail}".strip()


@dataclass
class Scenario:
    name: str
    config: str
    duration_steps: int
    dt: float = 0.1
    start_time: str = "08:00:00"
    dt_offline: bool = False
    params: Dict[str, float] = field(default_factory=dict)
    events: List[Event] = field(default_factory=list)
    assertions: List[Assertion] = field(default_factory=list)

    def label_step(self, label: str) -> int:
        for event in self.events:
            if event.label == label:
                return event.at
        raise ScenarioError(f"unknown label {label!r}")

    def resolve_step(self, ref: Union[int, str]) -> int:
        if isinstance(ref, bool) or not isinstance(ref, (int, str)):
            raise ScenarioError(f"bad step reference {ref!r}")
        if isinstance(ref, int):
            return ref
        return self.label_step(ref)

    def acc_params(self) -> AccParams:
        return acc_params_from(self.params)


def _parse_event(raw: dict, index: int) -> Event:
    action = raw.get("action")
    if action not in ACTIONS:
        raise ScenarioError(f"event {index}: unknown action {action!r}")
    at = raw.get("at")
    if isinstance(at, bool) or not isinstance(at, int) or at < 0:
        raise ScenarioError(f"event {index}: 'at' must be a non-negative step")
    event = Event(
        at=at,
        action=action,
        zone=raw.get("zone"),
        distance=raw.get("distance"),
        twin=raw.get("twin"),
        unit=raw.get("unit"),
        label=raw.get("label"),
    )
    if action in ("placeObstacle", "removeObstacle") and event.zone not in ZONES:
        raise ScenarioError(f"event {index}: zone must be one of {ZONES}")
    if action == "injectFault":
        if event.twin not in TWINS:
            raise ScenarioError(f"event {index}: injectFault twin must be one of {TWINS}")
        if not event.unit:
            raise ScenarioError(f"event {index}: injectFault needs a unit")
    if action == "label" and not event.label:
        raise ScenarioError(f"event {index}: label event needs a label")
    return event


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        raw = json.load(fh)
    return scenario_from_dict(raw)


def load_packaged_scenario(name: str) -> Scenario:
    text = resources.files("twinpair").joinpath(f"scenarios/{name}.json").read_text()
    return scenario_from_dict(json.loads(text))


def scenario_from_dict(raw: dict) -> Scenario:
    if raw.get("config") not in CONFIGS:
        raise ScenarioError(f"config must be one of {CONFIGS}")
    duration = raw.get("duration_steps")
    if isinstance(duration, bool) or not isinstance(duration, int) or duration <= 0:
        raise ScenarioError("duration_steps must be a positive integer")
    scenario = Scenario(
        name=str(raw.get("name", "unnamed")),
        config=raw["config"],
        duration_steps=duration,
        dt=float(raw.get("dt", 0.1)),
        start_time=str(raw.get("start_time", "08:00:00")),
        dt_offline=bool(raw.get("dt_offline", False)),
        params=dict(raw.get("params", {})),
        events=[_parse_event(e, i) for i, e in enumerate(raw.get("events", ()))],
        assertions=[],
    )
    _validate_events(scenario)
    scenario.assertions = [
        _parse_assertion(a, i, scenario) for i, a in enumerate(raw.get("assertions", ()))
    ]
    return scenario


def _validate_events(scenario: Scenario) -> None:
    r_max = scenario.acc_params().r_max
    last_at = -1
    labels = set()
    for index, event in enumerate(scenario.events):
        if event.at < last_at:
            raise ScenarioError(f"event {index}: timeline not sorted by 'at'")
        last_at = event.at
        if event.at >= scenario.duration_steps:
            raise ScenarioError(
                f"event {index}: at={event.at} is past the run "
                f"({scenario.duration_steps} steps)"
            )
        if event.action == "placeObstacle":
            if (
                not isinstance(event.distance, (int, float))
                or isinstance(event.distance, bool)
                or not 0 < event.distance <= r_max
            ):
                raise ScenarioError(
                    f"event {index}: distance must be in (0, {r_max}]"
                )
        if event.label is not None:
            if event.label in labels:
                raise ScenarioError(f"event {index}: duplicate label {event.label!r}")
            labels.add(event.label)


def _parse_assertion(raw: dict, index: int, scenario: Scenario) -> Assertion:
    check = raw.get("check")
    if check not in CHECKS:
        raise ScenarioError(f"assertion {index}: unknown check {check!r}")
    params = {k: v for k, v in raw.items() if k != "check"}
    end = scenario.duration_steps - 1

    def window(start_key: str, stop_key: str) -> None:
        start = scenario.resolve_step(params[start_key])
        stop = scenario.resolve_step(params[stop_key])
        if not 0 <= start <= stop <= end:
            raise ScenarioError(
                f"assertion {index}: window [{start}, {stop}] outside run [0, {end}]"
            )

    try:
        if check == "velocityZeroWithin":
            start = scenario.resolve_step(params["after"])
            steps = params["steps"]
            if isinstance(steps, bool) or not isinstance(steps, int) or steps <= 0:
                raise ScenarioError(f"assertion {index}: steps must be positive")
            if not 0 <= start <= end:
                raise ScenarioError(f"assertion {index}: after={start} outside run")
        elif check == "velocityPositiveThroughout":
            window("from", "to")
        elif check == "heartbeatFrozenAfter":
            start = scenario.resolve_step(params["after"])
            if not 0 <= start <= end:
                raise ScenarioError(f"assertion {index}: after={start} outside run")
        elif check == "accSourceIs":
            if not params.get("source"):
                raise ScenarioError(f"assertion {index}: accSourceIs needs a source")
            window("from", "to")
        elif check == "modeIs":
            if not params.get("mode"):
                raise ScenarioError(f"assertion {index}: modeIs needs a mode")
            window("from", "to")
    except KeyError as exc:
        raise ScenarioError(f"assertion {index}: missing field {exc}") from None
    return Assertion(check=check, params=params)


@dataclass
class AssertionResult:
    assertion: Assertion
    status: str  # "pass", "fail", "unevaluable"
    detail: str

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def line(self) -> str:
        mark = {"pass": "PASS", "fail": "FAIL", "unevaluable": "N/A "}[self.status]
        return f"[{mark}] {self.assertion.describe()}: {self.detail}"


def evaluate_assertions(
    rows: List[Dict[str, object]], scenario: Scenario
) -> List[AssertionResult]:
    return [_evaluate(a, rows, scenario) for a in scenario.assertions]


def _evaluate(
    assertion: Assertion, rows: List[Dict[str, object]], scenario: Scenario
) -> AssertionResult:
    p = assertion.params
    by_step = {row["step"]: row for row in rows}

    def result(status: str, detail: str) -> AssertionResult:
        return AssertionResult(assertion, status, detail)

    def slice_window(start: int, stop: int) -> Optional[List[Dict[str, object]]]:
        window = [by_step[s] for s in range(start, stop + 1) if s in by_step]
        if len(window) != stop - start + 1:
            return None
        return window

    if not rows:
        return result("unevaluable", "trace is empty")

    if assertion.check == "velocityZeroWithin":
        start = scenario.resolve_step(p["after"])
        stop = min(start + int(p["steps"]), rows[-1]["step"])
        window = slice_window(start, stop)
        if window is None or stop < start:
            return result("unevaluable", f"rows [{start}, {stop}] not in trace")
        for row in window:
            if row["pt_velocity"] == 0.0:
                return result("pass", f"velocity reached 0 at step {row['step']}")
        return result("fail", f"velocity never 0 in [{start}, {stop}]")

    if assertion.check == "velocityPositiveThroughout":
        start = scenario.resolve_step(p["from"])
        stop = scenario.resolve_step(p["to"])
        window = slice_window(start, stop)
        if window is None:
            return result("unevaluable", f"rows [{start}, {stop}] not in trace")
        bad = [r["step"] for r in window if not r["pt_velocity"] > 0.0]
        if bad:
            return result("fail", f"velocity not positive at steps {bad[:5]}")
        return result("pass", f"velocity positive across [{start}, {stop}]")

    if assertion.check == "heartbeatFrozenAfter":
        start = scenario.resolve_step(p["after"])
        window = [row for row in rows if row["step"] >= start]
        if not window or window[0]["step"] != start:
            return result("unevaluable", f"step {start} not in trace")
        frozen = window[0]["heartbeat"]
        bad = [r["step"] for r in window if r["heartbeat"] != frozen]
        if bad:
            return result("fail", f"heartbeat moved after {start} at steps {bad[:5]}")
        return result("pass", f"heartbeat constant at {frozen} from step {start}")

    if assertion.check in ("accSourceIs", "modeIs"):
        column = "acc_source" if assertion.check == "accSourceIs" else "twin_mode"
        wanted = p["source"] if assertion.check == "accSourceIs" else p["mode"]
        start = scenario.resolve_step(p["from"])
        stop = scenario.resolve_step(p["to"])
        window = slice_window(start, stop)
        if window is None:
            return result("unevaluable", f"rows [{start}, {stop}] not in trace")
        bad = [r["step"] for r in window if r[column] != wanted]
        if bad:
            return result(
                "fail", f"{column} != {wanted!r} at steps {bad[:5]} (of {len(bad)})"
            )
        return result("pass", f"{column} == {wanted!r} across [{start}, {stop}]")

    return result("unevaluable", f"unknown check {assertion.check!r}")
