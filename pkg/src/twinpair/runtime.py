"""Twin runtimes: configuration, assembly, and the per-twin control logic.

A twin config (JSON) declares the units, their wiring, the stepping engine
and order, and the broker link mapping.  ``build_twin`` turns one into a
registry plus a validated wiring plan.

``PtRuntime`` runs the physical side: it is stepped by the peer's
heartbeat while the peer is trusted, falls back to a local fixed rate when
it is not, applies scenario events at step boundaries, and records the
trace.  ``DtRuntime`` runs the digital side: strictly message-driven, one
step per fresh physical heartbeat, forever (it never free-runs; a silent
peer simply means no steps).

The handshake at start is deliberately simple.  The physical twin repeats
a counter-0 hello on its heartbeat topic until the digital twin, woken by
any first message, starts stepping and heartbeating back.  Real heartbeat
counters start at 1, so the hello can never be mistaken for one.  If no
peer answers within the handshake timeout the physical twin books a full
window of misses and proceeds alone through the normal fallback path.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .engine import (
    EngineKind,
    TriggerController,
    TriggerMode,
    jacobi_step,
    run_loop,
    sequential_step,
)
from .faults import FaultInjector, FaultSpec
from .heartbeat import (
    HeartbeatUnit,
    LivenessMonitor,
    ProtocolParams,
    TwinMode,
    decide_mode,
)
from .rover import (
    AccParams,
    AccUnit,
    EnvironmentState,
    PlantUnit,
    SelectorUnit,
    SensorUnit,
    Service,
)
from .scenario import Event, Scenario
from .simcore import Connection, SimError, StepUnit, UnitRegistry, validate_wiring
from .trace import EventLog, TraceRecorder
from .twinlink.bridge import BridgeUnit, LinkConfig
from .twinlink.frames import (
    Envelope,
    TOPIC_DT_HEARTBEAT,
    TOPIC_DT_OUT,
    TOPIC_PT_HEARTBEAT,
    TOPIC_PT_OUT,
)
from .twinlink.transport import LinkClient

log = logging.getLogger(__name__)

HELLO_INTERVAL = 0.05


def parse_connection(text: str) -> Connection:
    """Parse "unit.port -> unit.port"."""
    try:
        left, right = text.split("->")
        src_unit, src_port = left.strip().split(".")
        dst_unit, dst_port = right.strip().split(".")
    except ValueError:
        raise SimError(f"bad wiring entry {text!r}") from None
    return Connection(src_unit, src_port, dst_unit, dst_port)


@dataclass
class TwinConfig:
    twin: str
    service: Service
    engine: EngineKind
    units: List[dict]
    wiring: List[Connection]
    order: List[str]
    link: dict
    faults: List[FaultSpec] = field(default_factory=list)
    dt: Optional[float] = None
    params: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "TwinConfig":
        twin = raw.get("twin", "").lower()
        if twin not in ("pt", "dt"):
            raise SimError(f"twin must be 'pt' or 'dt', got {raw.get('twin')!r}")
        try:
            service = Service(raw.get("service"))
            engine = EngineKind(raw.get("engine"))
        except ValueError as exc:
            raise SimError(str(exc)) from None
        faults = [
            FaultSpec(
                twin=twin,
                unit=f["unit"],
                at=int(f["at"]),
                kind=f.get("kind", "loss_of_software_unit"),
            )
            for f in raw.get("faults", ())
        ]
        dt = raw.get("dt")
        return cls(
            twin=twin,
            service=service,
            engine=engine,
            units=list(raw.get("units", ())),
            wiring=[parse_connection(w) for w in raw.get("wiring", ())],
            order=list(raw.get("order", ())),
            link=dict(raw.get("link", {})),
            faults=faults,
            dt=float(dt) if dt is not None else None,
            params=dict(raw.get("params", {})),
        )


def load_twin_config(path: str) -> TwinConfig:
    with open(path) as fh:
        return TwinConfig.from_dict(json.load(fh))


def load_packaged_config(name: str) -> TwinConfig:
    text = resources.files("twinpair").joinpath(f"configs/{name}.json").read_text()
    return TwinConfig.from_dict(json.loads(text))


@dataclass
class TwinAssembly:
    registry: UnitRegistry
    plan: object
    order: Tuple[str, ...]
    bridge: BridgeUnit
    heartbeat: HeartbeatUnit
    plant: PlantUnit
    selector: Optional[SelectorUnit] = None
    local_acc: Optional[AccUnit] = None
    sensors: Optional[SensorUnit] = None


def build_twin(
    config: TwinConfig,
    *,
    client: LinkClient,
    params: AccParams,
    wallclock: Callable[[], str],
    env: Optional[EnvironmentState] = None,
    on_link_down: Optional[Callable[[], None]] = None,
) -> TwinAssembly:
    registry = UnitRegistry()
    source = config.twin.upper()
    heartbeat_topic = TOPIC_PT_HEARTBEAT if config.twin == "pt" else TOPIC_DT_HEARTBEAT
    bridge: Optional[BridgeUnit] = None
    heartbeat: Optional[HeartbeatUnit] = None
    plant: Optional[PlantUnit] = None
    selector: Optional[SelectorUnit] = None
    local_acc: Optional[AccUnit] = None
    sensors: Optional[SensorUnit] = None
    for entry in config.units:
        uid = entry["id"]
        utype = entry["type"]
        unit: StepUnit
        if utype == "sensors":
            if env is None:
                raise SimError(f"unit {uid!r} needs an environment, none given")
            unit = sensors = SensorUnit(uid, env, params)
        elif utype == "acc_basic":
            unit = AccUnit(uid, advanced=False, params=params)
            local_acc = local_acc or unit
        elif utype == "acc_advanced":
            unit = AccUnit(uid, advanced=True, params=params)
            local_acc = local_acc or unit
        elif utype == "selector":
            unit = selector = SelectorUnit(uid, config.service, params)
        elif utype == "plant":
            unit = plant = PlantUnit(uid, params)
        elif utype == "bridge":
            unit = bridge = BridgeUnit(
                uid,
                LinkConfig.from_dict(config.link),
                client,
                source,
                wallclock,
                on_link_down=on_link_down,
            )
        elif utype == "heartbeat":
            unit = heartbeat = HeartbeatUnit(uid, client, source, heartbeat_topic, wallclock)
        else:
            raise SimError(f"unit {uid!r} has unknown type {utype!r}")
        registry.add(unit)
    if bridge is None or heartbeat is None or plant is None:
        raise SimError("a twin needs at least a bridge, a heartbeat, and a plant")
    plan = validate_wiring(registry, config.wiring)
    order = tuple(config.order)
    if config.engine is EngineKind.SEQUENTIAL_IMMEDIATE and not order:
        raise SimError("sequential engine requires an explicit unit order")
    return TwinAssembly(
        registry=registry,
        plan=plan,
        order=order,
        bridge=bridge,
        heartbeat=heartbeat,
        plant=plant,
        selector=selector,
        local_acc=local_acc,
        sensors=sensors,
    )


def _default_wallclock() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def virtual_wallclock(start_time: str, clock: Callable[[], float]) -> Callable[[], str]:
    start = _dt.datetime.strptime(start_time, "%H:%M:%S")
    def fmt() -> str:
        moment = start + _dt.timedelta(seconds=clock())
        return moment.strftime("%H:%M:%S.%f")[:-3]
    return fmt


def _valid_counter(value: object) -> Optional[int]:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        return None
    return value


class PtRuntime:
    """The physical twin's control loop around its co-simulation."""

    def __init__(
        self,
        config: TwinConfig,
        scenario: Scenario,
        client: LinkClient,
        *,
        clock: Callable[[], float],
        period: Optional[float] = None,
        event_log: Optional[EventLog] = None,
        wallclock: Optional[Callable[[], str]] = None,
    ) -> None:
        if config.twin != "pt":
            raise SimError("PtRuntime needs a physical-twin config")
        self.scenario = scenario
        self.client = client
        self.clock = clock
        self.params = scenario.acc_params()
        sp = scenario.params
        self.proto = ProtocolParams(
            period=float(period if period is not None else scenario.dt),
            deadline_factor=float(sp.get("deadline_factor", 2.0)),
            miss_threshold=int(sp.get("miss_threshold", 3)),
            resync_steps=int(sp.get("resync_steps", 3)),
            handshake_timeout=float(sp.get("handshake_timeout", 5.0)),
        )
        self.event_log = event_log if event_log is not None else EventLog()
        self.env = EnvironmentState()
        self.assembly = build_twin(
            config,
            client=client,
            params=self.params,
            env=self.env,
            wallclock=wallclock or _default_wallclock,
            on_link_down=self._on_link_down,
        )
        if self.assembly.selector is None or self.assembly.local_acc is None:
            raise SimError("the physical twin needs a selector and a local controller")
        self.monitor = LivenessMonitor(self.proto)
        self.trigger = TriggerController(self.proto.period)
        self.mode = TwinMode.LOCAL_FALLBACK
        self.recorder = TraceRecorder(scenario.start_time, scenario.dt)
        self.injector = FaultInjector("pt", self.assembly.registry, on_fire=self._on_fault)
        for armed in config.faults:
            self.injector.arm(armed)
        for event in scenario.events:
            if event.action == "injectFault" and event.twin == "pt":
                self.injector.arm(FaultSpec(twin="pt", unit=event.unit or "", at=event.at))
        self._events_by_step: Dict[int, List[Event]] = {}
        for event in scenario.events:
            if event.action != "injectFault":
                self._events_by_step.setdefault(event.at, []).append(event)
        self.steps_taken = 0
        self.started = False
        self._handshake_deadline: Optional[float] = None
        self._hello_at: Optional[float] = None
        self._resync_remaining = 0
        client.subscribe(TOPIC_DT_HEARTBEAT)

    def _on_fault(self, spec: FaultSpec) -> None:
        self.event_log.add(self.steps_taken, "fault_fired", twin=spec.twin, unit=spec.unit)
        local = self.assembly.local_acc
        if local is not None and spec.unit == local.unit_id:
            self.event_log.add(self.steps_taken, "unit_failure", unit=spec.unit)

    def _on_link_down(self) -> None:
        self.event_log.add(self.steps_taken, "link_down")

    def start(self) -> None:
        now = self.clock()
        self._hello_at = now
        self._handshake_deadline = now + self.proto.handshake_timeout

    def poll(self) -> None:
        now = self.clock()
        while True:
            msg = self.client.poll_message()
            if msg is None:
                break
            self.on_message(msg[0], msg[1], now)
        if not self.started:
            assert self._hello_at is not None and self._handshake_deadline is not None
            if now >= self._hello_at:
                self.assembly.heartbeat.emit_hello()
                self._hello_at = now + HELLO_INTERVAL
            if now >= self._handshake_deadline:
                self.monitor.force_down()
                self.started = True
                self.event_log.add(
                    self.steps_taken,
                    "handshake_timeout",
                    waited=self.proto.handshake_timeout,
                )
        self._refresh_mode(now)

    def on_message(self, topic: str, envelope: Envelope, now: float) -> None:
        if topic == TOPIC_DT_HEARTBEAT:
            counter = _valid_counter(envelope.payload.get("counter"))
            if counter is None:
                log.warning("ignoring heartbeat with bad counter: %r", envelope.payload)
                return
            if self.monitor.accept(counter, now):
                self.started = True
                self.trigger.remote_tick()
        elif topic == TOPIC_DT_OUT:
            self.assembly.bridge.ingest(topic, envelope)
            payload = envelope.payload
            basis = payload.get("dt_basis_step")
            vel = payload.get("dt_target_vel")
            accel = payload.get("dt_target_accel")
            if (
                isinstance(basis, int)
                and not isinstance(basis, bool)
                and isinstance(vel, (int, float))
                and not isinstance(vel, bool)
                and isinstance(accel, (int, float))
                and not isinstance(accel, bool)
            ):
                self.recorder.record_fill(basis, float(vel), float(accel))

    def _refresh_mode(self, now: float) -> None:
        if not self.started:
            return
        self.monitor.poll(now)
        local = self.assembly.local_acc
        fallback_available = local.alive if local is not None else False
        new_mode = decide_mode(self.mode, self.monitor.state, fallback_available)
        if new_mode is not self.mode:
            self.event_log.add(
                self.steps_taken,
                "mode_change",
                from_mode=self.mode.value,
                to_mode=new_mode.value,
                heartbeat=self.monitor.last_counter,
                misses=self.monitor.misses_total,
            )
            if new_mode is TwinMode.DT_SYNCED:
                self._resync_remaining = self.proto.resync_steps
                self.event_log.add(
                    self.steps_taken, "resync", steps=self.proto.resync_steps
                )
            self.mode = new_mode
        assert self.assembly.selector is not None
        self.assembly.selector.mode = self.mode
        wanted = (
            TriggerMode.REMOTE_DRIVEN
            if self.mode is TwinMode.DT_SYNCED
            else TriggerMode.LOCAL_FIXED_RATE
        )
        self.trigger.set_trigger_mode(wanted, now)

    def maybe_step(self) -> bool:
        if self.steps_taken >= self.scenario.duration_steps:
            return False
        now = self.clock()
        if not self.trigger.step_due(now):
            return False
        self.trigger.consume(now)
        self.step_once(now)
        return True

    def step_once(self, now: float) -> None:
        step = self.steps_taken
        for event in self._events_by_step.get(step, ()):
            self._apply_event(event)
        fired = self.injector.on_step_boundary(step)
        if fired:
            self._refresh_mode(now)
        bridge = self.assembly.bridge
        if self._resync_remaining > 0:
            plant = self.assembly.plant
            bridge.extra_payload = {
                "snap_position": plant.state.position,
                "snap_velocity": plant.state.velocity,
                "snap_acc_active": self.env.acc_active,
            }
            self._resync_remaining -= 1
        else:
            bridge.extra_payload = {}
        sequential_step(
            self.assembly.registry, self.assembly.order, self.assembly.plan, self.scenario.dt
        )
        self.steps_taken += 1
        selector = self.assembly.selector
        assert selector is not None
        self.recorder.draft_row(
            step,
            self.monitor.last_counter,
            selector.out_ports["applied_vel"],
            selector.out_ports["applied_accel"],
            self.mode.value,
            str(selector.out_ports["source"]),
            self.assembly.plant.out_ports["velocity"],
        )

    def _apply_event(self, event: Event) -> None:
        if event.action == "activateAcc":
            self.env.acc_active = True
        elif event.action == "deactivateAcc":
            self.env.acc_active = False
        elif event.action == "placeObstacle":
            assert event.zone is not None and event.distance is not None
            self.env.place_obstacle(event.zone, float(event.distance))
        elif event.action == "removeObstacle":
            assert event.zone is not None
            self.env.remove_obstacle(event.zone)
        detail: Dict[str, object] = {"action": event.action}
        for key in ("zone", "distance", "label"):
            value = getattr(event, key)
            if value is not None:
                detail[key] = value
        self.event_log.add(self.steps_taken, "scenario_event", **detail)

    def finalize(self) -> List[Dict[str, object]]:
        """Drain the inbox one last time, then build the trace rows."""
        self.poll()
        return self.recorder.rows()

    def run(self, *, drain_seconds: Optional[float] = None) -> None:
        """Blocking loop against a real clock, for the process topology."""
        self.start()
        run_loop(
            poll=self.poll,
            step_once=lambda: self.step_once(self.clock()),
            trigger=self.trigger,
            should_stop=lambda: self.steps_taken >= self.scenario.duration_steps,
            clock=self.clock,
        )
        # Quiesce: the last remote commands are still in flight.
        remain = drain_seconds if drain_seconds is not None else max(0.5, 5 * self.proto.period)
        deadline = self.clock() + remain
        while self.clock() < deadline:
            msg = self.client.wait_message(0.05)
            if msg is not None:
                self.on_message(msg[0], msg[1], self.clock())


class DtRuntime:
    """The digital twin's control loop: step when the physical side says so."""

    def __init__(
        self,
        config: TwinConfig,
        client: LinkClient,
        *,
        dt: float,
        clock: Callable[[], float],
        params: Optional[AccParams] = None,
        extra_faults: Sequence[FaultSpec] = (),
        wallclock: Optional[Callable[[], str]] = None,
        event_log: Optional[EventLog] = None,
    ) -> None:
        if config.twin != "dt":
            raise SimError("DtRuntime needs a digital-twin config")
        self.dt = dt
        self.client = client
        self.clock = clock
        self.event_log = event_log
        self.assembly = build_twin(
            config,
            client=client,
            params=params or AccParams(),
            wallclock=wallclock or _default_wallclock,
        )
        self.trigger = TriggerController(dt)
        self.injector = FaultInjector("dt", self.assembly.registry)
        for spec in list(config.faults) + list(extra_faults):
            self.injector.arm(spec)
        self.steps_taken = 0
        self._last_counter = -1
        self._last_activity = clock()
        client.subscribe(TOPIC_PT_HEARTBEAT)

    def on_message(self, topic: str, envelope: Envelope, now: float) -> None:
        self._last_activity = now
        if topic == TOPIC_PT_HEARTBEAT:
            counter = _valid_counter(envelope.payload.get("counter"))
            if counter is None:
                log.warning("ignoring heartbeat with bad counter: %r", envelope.payload)
                return
            if counter > self._last_counter:
                self._last_counter = counter
                self.trigger.remote_tick()
        elif topic == TOPIC_PT_OUT:
            self.assembly.bridge.ingest(topic, envelope)
            payload = envelope.payload
            if "snap_velocity" in payload:
                velocity = payload.get("snap_velocity")
                position = payload.get("snap_position", 0.0)
                if isinstance(velocity, float) and isinstance(position, float):
                    self.assembly.plant.force_state(position=position, velocity=velocity)
                    if self.event_log is not None:
                        self.event_log.add(self.steps_taken, "resync", applied=True)

    def poll(self) -> None:
        now = self.clock()
        while True:
            msg = self.client.poll_message()
            if msg is None:
                break
            self.on_message(msg[0], msg[1], now)

    def maybe_step(self) -> bool:
        now = self.clock()
        if not self.trigger.step_due(now):
            return False
        self.trigger.consume(now)
        self.step_once(now)
        return True

    def step_once(self, now: float) -> None:
        self._last_activity = now
        self.injector.on_step_boundary(self.steps_taken)
        jacobi_step(self.assembly.registry, self.assembly.plan, self.dt)
        self.steps_taken += 1

    def run(self, *, idle_exit: Optional[float] = None) -> None:
        def should_stop() -> bool:
            if idle_exit is None:
                return False
            return self.clock() - self._last_activity > idle_exit

        run_loop(
            poll=self.poll,
            step_once=lambda: self.step_once(self.clock()),
            trigger=self.trigger,
            should_stop=should_stop,
            clock=self.clock,
        )
