"""Rover model: sensing, cruise controllers, command selection, motion.

The vehicle is longitudinal only.  Distance sensing covers three zones, a
laser looking forward and one ultrasonic ranger per side.  Two adaptive
cruise controllers exist: the basic one reacts to the front laser only,
the advanced one fuses all three zones through a minimum.  Both emit a
target acceleration and a target velocity; the plant integrates whatever
command was selected for it.

The pure functions (sense, basic_acc, advanced_acc, select_command,
integrate) carry all behaviour; the StepUnit subclasses at the bottom just
wire those functions into the co-simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Sequence, Tuple

from .heartbeat import TwinMode
from .simcore import Kind, PortSpec, StepUnit

AGE_NEVER = 10 ** 9


class Service(Enum):
    """What the digital side does for the physical side."""

    AUGMENTATION = "augmentation"
    REDUNDANCY = "redundancy"


class AccSource(Enum):
    DT_AUGMENTED = "dt_augmented"
    PT_FALLBACK = "pt_fallback"
    PT_MAIN = "pt_main"
    DT_REPLICA = "dt_replica"
    SAFE_STOP = "safe_stop"


@dataclass(frozen=True)
class AccParams:
    d_stop: float = 0.5       # m, emergency stop distance
    r_max: float = 4.0        # m, sensor range; "nothing seen" reads as this
    v_cruise: float = 0.5     # m/s
    v_max: float = 1.0        # m/s, plant limit
    a_min: float = -2.0       # m/s^2
    a_max: float = 1.0        # m/s^2
    k_p: float = 2.0          # 1/s, velocity loop gain
    freshness_limit: int = 3  # steps a command may age before it is distrusted


ZONES = ("front", "left", "right")


def acc_params_from(overrides: Dict[str, float]) -> AccParams:
    """AccParams with defaults, selectively overridden; unknown keys pass."""
    defaults = AccParams()
    values = {
        name: overrides.get(name, getattr(defaults, name))
        for name in ("d_stop", "r_max", "v_cruise", "v_max", "a_min", "a_max", "k_p")
    }
    limit = overrides.get("freshness_limit", defaults.freshness_limit)
    return AccParams(freshness_limit=int(limit), **{k: float(v) for k, v in values.items()})


@dataclass
class EnvironmentState:
    """Scenario-controlled world state around the rover."""

    acc_active: bool = False
    obstacles: Dict[str, float] = field(default_factory=dict)  # zone -> distance

    def place_obstacle(self, zone: str, distance: float) -> None:
        self.obstacles[zone] = distance

    def remove_obstacle(self, zone: str) -> None:
        self.obstacles.pop(zone, None)


@dataclass(frozen=True)
class SensorReading:
    laser_front: float
    us_left: float
    us_right: float
    user_cmd: bool


@dataclass(frozen=True)
class AccCommand:
    accel: float
    target_vel: float


@dataclass(frozen=True)
class VehicleState:
    position: float = 0.0
    velocity: float = 0.0


def sense(env: EnvironmentState, p: AccParams = AccParams()) -> SensorReading:
    def zone(name: str) -> float:
        return min(env.obstacles.get(name, p.r_max), p.r_max)

    return SensorReading(
        laser_front=zone("front"),
        us_left=zone("left"),
        us_right=zone("right"),
        user_cmd=env.acc_active,
    )


def _clamp(value: float, low: float, high: float) -> float:
    return min(max(value, low), high)


def basic_acc(laser_front: float, velocity: float, p: AccParams) -> AccCommand:
    """Front-laser-only cruise control.

    Below the stop distance it demands a full stop; otherwise it tracks
    the cruise speed with a proportional law, saturated at the actuator
    limits.
    """
    if laser_front < p.d_stop:
        return AccCommand(accel=p.a_min, target_vel=0.0)
    accel = _clamp(p.k_p * (p.v_cruise - velocity), p.a_min, p.a_max)
    return AccCommand(accel=accel, target_vel=p.v_cruise)


def advanced_acc(reading: SensorReading, velocity: float, p: AccParams) -> AccCommand:
    """Three-zone cruise control: nearest obstacle in any zone governs."""
    effective = min(reading.laser_front, reading.us_left, reading.us_right)
    return basic_acc(effective, velocity, p)


def _clamp_command(cmd: AccCommand, p: AccParams) -> AccCommand:
    return AccCommand(
        accel=_clamp(cmd.accel, p.a_min, p.a_max),
        target_vel=_clamp(cmd.target_vel, 0.0, p.v_max),
    )


def select_command(
    service: Service,
    mode: TwinMode,
    local_cmd: AccCommand,
    local_age: int,
    remote_cmd: AccCommand,
    remote_age: int,
    p: AccParams,
) -> Tuple[AccCommand, AccSource]:
    """Pick which command drives the plant this step.

    Augmentation prefers the remote (richer) controller whenever the peer
    is trusted and its data is fresh, with the local controller as the
    fallback.  Redundancy is the other way round: local while it lives,
    remote replica when it does not, and a hard stop when neither source
    is usable.  Freshness is measured in steps; remote values pass through
    a clamp so a peer can never command outside the actuator envelope.
    """
    local_fresh = local_age <= p.freshness_limit
    remote_fresh = mode is TwinMode.DT_SYNCED and remote_age <= p.freshness_limit
    if service is Service.AUGMENTATION:
        if remote_fresh:
            return _clamp_command(remote_cmd, p), AccSource.DT_AUGMENTED
        return _clamp_command(local_cmd, p), AccSource.PT_FALLBACK
    if local_fresh:
        return _clamp_command(local_cmd, p), AccSource.PT_MAIN
    if remote_fresh:
        return _clamp_command(remote_cmd, p), AccSource.DT_REPLICA
    return AccCommand(accel=p.a_min, target_vel=0.0), AccSource.SAFE_STOP


def integrate(state: VehicleState, cmd: AccCommand, dt: float, p: AccParams) -> VehicleState:
    """Advance the vehicle one step under a command.

    Acceleration runs toward the command's target velocity and stops there
    instead of overshooting; velocity is kept in [0, v_max].  Position uses
    the velocity at the start of the step.
    """
    velocity = state.velocity + cmd.accel * dt
    if cmd.accel > 0:
        velocity = min(velocity, cmd.target_vel)
    elif cmd.accel < 0:
        velocity = max(velocity, cmd.target_vel)
    velocity = _clamp(velocity, 0.0, p.v_max)
    return VehicleState(
        position=state.position + state.velocity * dt,
        velocity=velocity,
    )


class SensorUnit(StepUnit):
    """Publishes the environment's current reading on its output ports."""

    def __init__(self, unit_id: str, env: EnvironmentState, params: AccParams) -> None:
        self.env = env
        self.params = params
        super().__init__(unit_id)

    def outputs(self) -> Sequence[PortSpec]:
        r = self.params.r_max
        return (
            PortSpec("laser_front", Kind.REAL, r),
            PortSpec("us_left", Kind.REAL, r),
            PortSpec("us_right", Kind.REAL, r),
            PortSpec("user_cmd", Kind.BOOLEAN, False),
        )

    def do_step(self, step: int, dt: float) -> None:
        reading = sense(self.env, self.params)
        self.out_ports["laser_front"] = reading.laser_front
        self.out_ports["us_left"] = reading.us_left
        self.out_ports["us_right"] = reading.us_right
        self.out_ports["user_cmd"] = reading.user_cmd


class AccUnit(StepUnit):
    """One cruise controller instance, basic or advanced.

    ``seq`` counts executed steps so a downstream selector can tell a live
    controller from a halted one whose outputs are frozen.  ``basis_step``
    is echoed from input to output untouched: when this unit runs on the
    digital side it computes from forwarded sensor data, and the echo tags
    each command with the physical step that data came from.
    """

    def __init__(self, unit_id: str, advanced: bool, params: AccParams) -> None:
        self.advanced = advanced
        self.params = params
        super().__init__(unit_id)

    def inputs(self) -> Sequence[PortSpec]:
        r = self.params.r_max
        specs = [
            PortSpec("laser_front", Kind.REAL, r),
            PortSpec("enabled", Kind.BOOLEAN, False),
            PortSpec("velocity", Kind.REAL, 0.0),
            PortSpec("basis_step", Kind.INTEGER, -1),
        ]
        if self.advanced:
            specs[1:1] = [
                PortSpec("us_left", Kind.REAL, r),
                PortSpec("us_right", Kind.REAL, r),
            ]
        return specs

    def outputs(self) -> Sequence[PortSpec]:
        return (
            PortSpec("target_accel", Kind.REAL, 0.0),
            PortSpec("target_vel", Kind.REAL, 0.0),
            PortSpec("seq", Kind.INTEGER, 0),
            PortSpec("basis_step", Kind.INTEGER, -1),
        )

    def do_step(self, step: int, dt: float) -> None:
        if not self.in_ports["enabled"]:
            cmd = AccCommand(0.0, 0.0)
        elif self.advanced:
            reading = SensorReading(
                laser_front=self.in_ports["laser_front"],
                us_left=self.in_ports["us_left"],
                us_right=self.in_ports["us_right"],
                user_cmd=True,
            )
            cmd = advanced_acc(reading, self.in_ports["velocity"], self.params)
        else:
            cmd = basic_acc(
                self.in_ports["laser_front"], self.in_ports["velocity"], self.params
            )
        self.out_ports["target_accel"] = cmd.accel
        self.out_ports["target_vel"] = cmd.target_vel
        self.out_ports["seq"] = step + 1
        self.out_ports["basis_step"] = self.in_ports["basis_step"]


class SelectorUnit(StepUnit):
    """Applies select_command each step.

    The operating mode is pushed in by the runtime at step boundaries (it
    belongs to the twin, not to any one unit).  Local freshness is derived
    from the local controller's seq: a seq that stopped advancing ages.
    """

    def __init__(self, unit_id: str, service: Service, params: AccParams) -> None:
        self.service = service
        self.params = params
        self.mode = TwinMode.LOCAL_FALLBACK
        self._last_seq = -1
        self._local_age = AGE_NEVER
        super().__init__(unit_id)

    def inputs(self) -> Sequence[PortSpec]:
        return (
            PortSpec("local_accel", Kind.REAL, 0.0),
            PortSpec("local_vel", Kind.REAL, 0.0),
            PortSpec("local_seq", Kind.INTEGER, 0),
            PortSpec("remote_accel", Kind.REAL, 0.0),
            PortSpec("remote_vel", Kind.REAL, 0.0),
            PortSpec("remote_age", Kind.INTEGER, AGE_NEVER),
        )

    def outputs(self) -> Sequence[PortSpec]:
        return (
            PortSpec("applied_accel", Kind.REAL, 0.0),
            PortSpec("applied_vel", Kind.REAL, 0.0),
            PortSpec("source", Kind.TEXT, AccSource.SAFE_STOP.value),
        )

    def do_step(self, step: int, dt: float) -> None:
        seq = self.in_ports["local_seq"]
        if seq != self._last_seq:
            self._last_seq = seq
            self._local_age = 0
        elif self._local_age < AGE_NEVER:
            self._local_age += 1
        cmd, source = select_command(
            self.service,
            self.mode,
            AccCommand(self.in_ports["local_accel"], self.in_ports["local_vel"]),
            self._local_age,
            AccCommand(self.in_ports["remote_accel"], self.in_ports["remote_vel"]),
            self.in_ports["remote_age"],
            self.params,
        )
        self.out_ports["applied_accel"] = cmd.accel
        self.out_ports["applied_vel"] = cmd.target_vel
        self.out_ports["source"] = source.value


class PlantUnit(StepUnit):
    """Integrates the applied command into motion."""

    def __init__(self, unit_id: str, params: AccParams) -> None:
        self.params = params
        self.state = VehicleState()
        super().__init__(unit_id)

    def inputs(self) -> Sequence[PortSpec]:
        return (
            PortSpec("target_accel", Kind.REAL, 0.0),
            PortSpec("target_vel", Kind.REAL, 0.0),
        )

    def outputs(self) -> Sequence[PortSpec]:
        return (
            PortSpec("velocity", Kind.REAL, 0.0),
            PortSpec("position", Kind.REAL, 0.0),
        )

    def do_step(self, step: int, dt: float) -> None:
        cmd = AccCommand(self.in_ports["target_accel"], self.in_ports["target_vel"])
        self.state = integrate(self.state, cmd, dt, self.params)
        self.out_ports["velocity"] = self.state.velocity
        self.out_ports["position"] = self.state.position

    def force_state(self, position: float, velocity: float) -> None:
        """Overwrite motion state, used when a snapshot re-aligns a mirror."""
        self.state = VehicleState(position=position, velocity=velocity)
        self.out_ports["velocity"] = velocity
        self.out_ports["position"] = position
