"""Experiment runner for both topologies.

In-process: both twins share one memory hub and a virtual clock that only
moves between polling rounds, so every run of a scenario is exactly
reproducible, byte for byte.  Each round advances the clock one step
period, lets the physical twin poll and step, then the digital twin.
Because hub delivery is synchronous, one round of the steady state carries
one full physical-digital exchange.

Processes: a broker and the digital twin are spawned as child processes;
the physical twin runs here, against the real clock, over TCP.  Trace
columns come out identical to the in-process run because everything that
reaches the trace is driven by messages and step indices, not by wall
time.
"""

from __future__ import annotations

import json
import logging
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .faults import FaultSpec
from .runtime import (
    DtRuntime,
    PtRuntime,
    load_packaged_config,
    virtual_wallclock,
)
from .scenario import AssertionResult, Scenario, evaluate_assertions
from .simcore import SimError
from .trace import EventLog, events_path_for, write_trace
from .twinlink.transport import MemoryHub, MemoryLinkClient, TcpLinkClient

log = logging.getLogger(__name__)

TOPOLOGIES = ("in-process", "processes")


class VirtualClock:
    def __init__(self, start: float = 0.0) -> None:
        self.now = float(start)

    def set(self, value: float) -> None:
        self.now = value

    def __call__(self) -> float:
        return self.now


@dataclass
class ExperimentResult:
    rows: List[Dict[str, object]]
    results: List[AssertionResult]
    trace_path: str

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def _dt_faults(scenario: Scenario) -> List[FaultSpec]:
    return [
        FaultSpec(twin="dt", unit=event.unit or "", at=event.at)
        for event in scenario.events
        if event.action == "injectFault" and event.twin == "dt"
    ]


def run_in_process(scenario: Scenario) -> Tuple[List[Dict[str, object]], EventLog]:
    clock = VirtualClock()
    hub = MemoryHub()
    tick = scenario.dt
    wallclock = virtual_wallclock(scenario.start_time, clock)
    event_log = EventLog()
    pt = PtRuntime(
        load_packaged_config(f"pt_{scenario.config}"),
        scenario,
        MemoryLinkClient(hub, "pt"),
        clock=clock,
        event_log=event_log,
        wallclock=wallclock,
    )
    dt: Optional[DtRuntime] = None
    if not scenario.dt_offline:
        dt = DtRuntime(
            load_packaged_config(f"dt_{scenario.config}"),
            MemoryLinkClient(hub, "dt"),
            dt=scenario.dt,
            clock=clock,
            params=scenario.acc_params(),
            extra_faults=_dt_faults(scenario),
            wallclock=wallclock,
        )
    pt.start()
    guard = scenario.duration_steps * 4 + 200
    rounds = 0
    while pt.steps_taken < scenario.duration_steps:
        clock.set(rounds * tick)
        pt.poll()
        pt.maybe_step()
        if dt is not None:
            dt.poll()
            dt.maybe_step()
        rounds += 1
        if rounds > guard:
            raise SimError(
                f"run stalled: {pt.steps_taken}/{scenario.duration_steps} steps "
                f"after {rounds} rounds"
            )
    for _ in range(4):
        clock.set(rounds * tick)
        if dt is not None:
            dt.poll()
            dt.maybe_step()
        pt.poll()
        rounds += 1
    return pt.finalize(), event_log


def _spawn_broker() -> Tuple[subprocess.Popen, str]:
    proc = subprocess.Popen(
        [sys.executable, "-m", "twinpair.cli", "broker", "--listen", "127.0.0.1:0"],
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    assert proc.stdout is not None
    line = proc.stdout.readline().strip()
    prefix = "listening on "
    if not line.startswith(prefix):
        proc.terminate()
        raise SimError(f"broker did not start: {line!r}")
    return proc, line[len(prefix):]


def run_processes(
    scenario: Scenario, *, period: Optional[float] = None
) -> Tuple[List[Dict[str, object]], EventLog]:
    """Broker and digital twin as child processes, physical twin here."""
    with tempfile.TemporaryDirectory(prefix="twinpair-") as tmpdir:
        tmp = Path(tmpdir)
        broker_proc: Optional[subprocess.Popen] = None
        dt_proc: Optional[subprocess.Popen] = None
        try:
            broker_proc, addr = _spawn_broker()
            if not scenario.dt_offline:
                raw = json.loads(
                    resources.files("twinpair")
                    .joinpath(f"configs/dt_{scenario.config}.json")
                    .read_text()
                )
                raw["dt"] = scenario.dt
                raw["params"] = scenario.params
                raw["faults"] = [
                    {"unit": spec.unit, "at": spec.at} for spec in _dt_faults(scenario)
                ]
                dt_cfg = tmp / "dt_config.json"
                dt_cfg.write_text(json.dumps(raw, indent=1))
                dt_proc = subprocess.Popen(
                    [
                        sys.executable,
                        "-m",
                        "twinpair.cli",
                        "dt",
                        "--config",
                        str(dt_cfg),
                        "--broker",
                        addr,
                        "--idle-exit",
                        "30",
                    ],
                    stdout=subprocess.DEVNULL,
                    stderr=subprocess.DEVNULL,
                )
            host, port_text = addr.rsplit(":", 1)
            client = TcpLinkClient(host, int(port_text))
            event_log = EventLog()
            pt = PtRuntime(
                load_packaged_config(f"pt_{scenario.config}"),
                scenario,
                client,
                clock=time.monotonic,
                period=period,
                event_log=event_log,
            )
            pt.run()
            rows = pt.finalize()
            client.close()
            return rows, event_log
        finally:
            for proc in (dt_proc, broker_proc):
                if proc is not None:
                    proc.terminate()
                    try:
                        proc.wait(timeout=5)
                    except subprocess.TimeoutExpired:
                        proc.kill()
                        proc.wait()


def run_experiment(
    scenario: Scenario,
    *,
    out_path: str,
    topology: str = "in-process",
    period: Optional[float] = None,
) -> ExperimentResult:
    if topology not in TOPOLOGIES:
        raise SimError(f"topology must be one of {TOPOLOGIES}")
    if topology == "in-process":
        rows, event_log = run_in_process(scenario)
    else:
        rows, event_log = run_processes(scenario, period=period)
    write_trace(out_path, rows)
    event_log.write_jsonl(events_path_for(out_path))
    results = evaluate_assertions(rows, scenario)
    return ExperimentResult(rows=rows, results=results, trace_path=out_path)
