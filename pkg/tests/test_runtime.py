"""Twin runtimes around the engines: handshake, outage, resync, faults.

These drive PtRuntime/DtRuntime round by round over a paused or failing
memory hub, which is the closest an integration test gets to pulling a
network cable at a chosen instant.
"""

import pytest

from twinpair.harness import VirtualClock
from twinpair.heartbeat import TwinMode
from twinpair.runtime import (
    DtRuntime,
    PtRuntime,
    build_twin,
    load_packaged_config,
    parse_connection,
    virtual_wallclock,
)
from twinpair.scenario import scenario_from_dict
from twinpair.simcore import SimError
from twinpair.trace import EventLog
from twinpair.twinlink.transport import MemoryHub, MemoryLinkClient


def quiet_scenario(duration=80, config="augmentation", **extra):
    raw = {
        "name": "quiet",
        "config": config,
        "duration_steps": duration,
        "events": [{"at": 5, "action": "activateAcc"}],
        "assertions": [],
    }
    raw.update(extra)
    return scenario_from_dict(raw)


def make_pair(scenario):
    clock = VirtualClock()
    hub = MemoryHub()
    wallclock = virtual_wallclock(scenario.start_time, clock)
    log = EventLog()
    pt = PtRuntime(
        load_packaged_config(f"pt_{scenario.config}"),
        scenario,
        MemoryLinkClient(hub, "pt"),
        clock=clock,
        event_log=log,
        wallclock=wallclock,
    )
    dt = DtRuntime(
        load_packaged_config(f"dt_{scenario.config}"),
        MemoryLinkClient(hub, "dt"),
        dt=scenario.dt,
        clock=clock,
        params=scenario.acc_params(),
        wallclock=wallclock,
    )
    return clock, hub, pt, dt, log


def run_rounds(clock, pt, dt, scenario, start, stop):
    for rounds in range(start, stop):
        clock.set(rounds * scenario.dt)
        pt.poll()
        pt.maybe_step()
        if dt is not None:
            dt.poll()
            dt.maybe_step()


def event_kinds(log):
    return [e["kind"] for e in log.events]


def test_handshake_brings_up_lockstep():
    scenario = quiet_scenario()
    clock, hub, pt, dt, log = make_pair(scenario)
    pt.start()
    run_rounds(clock, pt, dt, scenario, 0, 20)
    assert pt.mode is TwinMode.DT_SYNCED
    assert pt.steps_taken > 10
    assert dt.steps_taken >= pt.steps_taken - 1  # lockstep, off by at most one
    kinds = event_kinds(log)
    assert "mode_change" in kinds  # local_fallback -> dt_synced at handshake
    assert "handshake_timeout" not in kinds


def test_outage_falls_back_and_revival_resyncs():
    scenario = quiet_scenario(duration=200)
    clock, hub, pt, dt, log = make_pair(scenario)
    pt.start()
    run_rounds(clock, pt, dt, scenario, 0, 30)
    assert pt.mode is TwinMode.DT_SYNCED
    steps_at_pause = pt.steps_taken

    hub.pause()  # cable out; in-flight traffic is lost
    run_rounds(clock, pt, dt, scenario, 30, 50)
    assert pt.mode is TwinMode.LOCAL_FALLBACK
    # the physical twin kept stepping through the outage on its own clock
    assert pt.steps_taken > steps_at_pause + 5

    hub.resume(deliver_held=False)
    run_rounds(clock, pt, dt, scenario, 50, 70)
    assert pt.mode is TwinMode.DT_SYNCED

    changes = [e for e in log.events if e["kind"] == "mode_change"]
    transitions = [(e["from_mode"], e["to_mode"]) for e in changes]
    assert ("dt_synced", "local_fallback") in transitions
    assert ("local_fallback", "dt_synced") in transitions
    # every return to sync re-sends the state snapshot
    resyncs = [e for e in log.events if e["kind"] == "resync"]
    assert len(resyncs) == sum(1 for t in transitions if t[1] == "dt_synced")
    # and the digital twin's plant was forced onto the physical state
    assert dt.assembly.plant.state.velocity == pytest.approx(
        pt.assembly.plant.state.velocity, abs=0.2
    )


def test_revival_restores_sync_in_one_round():
    scenario = quiet_scenario(duration=200)
    clock, hub, pt, dt, log = make_pair(scenario)
    pt.start()
    run_rounds(clock, pt, dt, scenario, 0, 30)
    hub.pause()
    run_rounds(clock, pt, dt, scenario, 30, 50)
    assert pt.mode is TwinMode.LOCAL_FALLBACK
    hub.resume(deliver_held=False)
    # one full round: pt beats, dt answers, pt polls the answer next round
    run_rounds(clock, pt, dt, scenario, 50, 53)
    assert pt.mode is TwinMode.DT_SYNCED


def test_handshake_timeout_starts_local_operation():
    scenario = quiet_scenario(duration=80)
    clock = VirtualClock()
    hub = MemoryHub()
    log = EventLog()
    pt = PtRuntime(
        load_packaged_config("pt_augmentation"),
        scenario,
        MemoryLinkClient(hub, "pt"),
        clock=clock,
        event_log=log,
        wallclock=virtual_wallclock(scenario.start_time, clock),
    )
    pt.start()
    # no digital twin exists; drive 49 rounds of silence (< 5.0s timeout)
    run_rounds(clock, pt, None, scenario, 0, 50)
    assert pt.steps_taken == 0
    assert not pt.started
    # crossing the timeout flips to autonomous local stepping
    run_rounds(clock, pt, None, scenario, 50, 60)
    assert pt.started
    assert pt.mode is TwinMode.LOCAL_FALLBACK
    assert pt.steps_taken > 0
    assert "handshake_timeout" in event_kinds(log)


def test_link_down_is_reported_once_and_run_continues():
    scenario = quiet_scenario(duration=60)
    clock, hub, pt, dt, log = make_pair(scenario)
    pt.start()
    run_rounds(clock, pt, dt, scenario, 0, 20)
    pt.client.link_down = True  # publishes now fail outright
    run_rounds(clock, pt, dt, scenario, 20, 60)
    downs = [e for e in log.events if e["kind"] == "link_down"]
    assert len(downs) == 1
    assert pt.steps_taken > 20  # the twin soldiered on


def test_pt_runtime_rejects_dt_config():
    scenario = quiet_scenario()
    hub = MemoryHub()
    with pytest.raises(SimError):
        PtRuntime(
            load_packaged_config("dt_augmentation"),
            scenario,
            MemoryLinkClient(hub, "pt"),
            clock=lambda: 0.0,
        )


def test_parse_connection():
    conn = parse_connection("a.out -> b.in")
    assert (conn.src_unit, conn.src_port, conn.dst_unit, conn.dst_port) == (
        "a", "out", "b", "in"
    )
    with pytest.raises(SimError):
        parse_connection("a.out b.in")
    with pytest.raises(SimError):
        parse_connection("a -> b.in")


def test_build_twin_requires_order_for_sequential():
    from twinpair.rover import EnvironmentState

    config = load_packaged_config("pt_augmentation")
    config.order = []
    hub = MemoryHub()
    with pytest.raises(SimError) as err:
        build_twin(
            config,
            client=MemoryLinkClient(hub, "pt"),
            params=quiet_scenario().acc_params(),
            wallclock=lambda: "t",
            env=EnvironmentState(),
        )
    assert "order" in str(err.value)


def test_build_twin_requires_environment_for_sensors():
    config = load_packaged_config("pt_augmentation")
    hub = MemoryHub()
    with pytest.raises(SimError) as err:
        build_twin(
            config,
            client=MemoryLinkClient(hub, "pt"),
            params=quiet_scenario().acc_params(),
            wallclock=lambda: "t",
        )
    assert "environment" in str(err.value)
