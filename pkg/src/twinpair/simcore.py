"""Core co-simulation pieces: typed ports, steppable units, wiring.

A simulation is a set of named units.  Each unit advances in fixed steps and
exposes typed input and output ports.  Connections carry the value of an
output port into an input port between (or during) steps; how and when that
happens is the engine's business (see :mod:`twinpair.engine`), this module
only provides the building blocks and validates that a wiring makes sense.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

Scalar = Union[float, int, bool, str]


class Kind(Enum):
    """Port value kinds, deliberately small: scalars only."""

    REAL = "real"
    INTEGER = "integer"
    BOOLEAN = "boolean"
    TEXT = "text"


_DEFAULTS: Dict[Kind, Scalar] = {
    Kind.REAL: 0.0,
    Kind.INTEGER: 0,
    Kind.BOOLEAN: False,
    Kind.TEXT: "",
}


def coerce(kind: Kind, value: Scalar) -> Scalar:
    """Normalise *value* to the python type backing *kind*.

    Accepts ints where reals are expected (they embed exactly), and bools
    where ints are expected are rejected: a bool is not a count.
    """
    if kind is Kind.REAL:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise KindMismatch(f"expected real, got {value!r}")
        return float(value)
    if kind is Kind.INTEGER:
        if isinstance(value, bool) or not isinstance(value, int):
            raise KindMismatch(f"expected integer, got {value!r}")
        return int(value)
    if kind is Kind.BOOLEAN:
        if not isinstance(value, bool):
            raise KindMismatch(f"expected boolean, got {value!r}")
        return value
    if not isinstance(value, str):
        raise KindMismatch(f"expected text, got {value!r}")
    return value


class SimError(Exception):
    """Base class for everything this package raises on purpose."""


class UnknownUnit(SimError):
    pass


class UnknownPort(SimError):
    pass


class KindMismatch(SimError):
    pass


class DuplicateInput(SimError):
    pass


@dataclass(frozen=True)
class PortSpec:
    name: str
    kind: Kind
    initial: Optional[Scalar] = None

    def default(self) -> Scalar:
        if self.initial is None:
            return _DEFAULTS[self.kind]
        return coerce(self.kind, self.initial)


class StepUnit:
    """A unit that advances in discrete steps.

    Subclasses declare ports via :meth:`inputs` / :meth:`outputs` and
    implement :meth:`do_step`.  Port values live in plain dicts so that an
    engine can snapshot and propagate them without knowing the unit type.
    """

    def __init__(self, unit_id: str) -> None:
        self.unit_id = unit_id
        self.in_ports: Dict[str, Scalar] = {}
        self.out_ports: Dict[str, Scalar] = {}
        self._in_specs: Dict[str, PortSpec] = {}
        self._out_specs: Dict[str, PortSpec] = {}
        for spec in self.inputs():
            self._in_specs[spec.name] = spec
            self.in_ports[spec.name] = spec.default()
        for spec in self.outputs():
            self._out_specs[spec.name] = spec
            self.out_ports[spec.name] = spec.default()
        self.steps_done = 0
        self.halted = False

    def inputs(self) -> Sequence[PortSpec]:
        return ()

    def outputs(self) -> Sequence[PortSpec]:
        return ()

    def input_spec(self, name: str) -> PortSpec:
        try:
            return self._in_specs[name]
        except KeyError:
            raise UnknownPort(f"{self.unit_id} has no input port {name!r}") from None

    def output_spec(self, name: str) -> PortSpec:
        try:
            return self._out_specs[name]
        except KeyError:
            raise UnknownPort(f"{self.unit_id} has no output port {name!r}") from None

    def set_input(self, name: str, value: Scalar) -> None:
        spec = self.input_spec(name)
        self.in_ports[name] = coerce(spec.kind, value)

    def get_output(self, name: str) -> Scalar:
        self.output_spec(name)
        return self.out_ports[name]

    def do_step(self, step: int, dt: float) -> None:
        """Advance the unit by one step of size *dt*. Override me."""
        raise NotImplementedError

    def step(self, dt: float) -> None:
        """Advance unless halted; a halted unit freezes, outputs included."""
        if self.halted:
            return
        self.do_step(self.steps_done, dt)
        self.steps_done += 1

    def halt(self) -> None:
        self.halted = True

    @property
    def alive(self) -> bool:
        return not self.halted


class UnitRegistry:
    """Units by id, insertion-ordered."""

    def __init__(self) -> None:
        self._units: "Dict[str, StepUnit]" = {}

    def add(self, unit: StepUnit) -> StepUnit:
        if unit.unit_id in self._units:
            raise SimError(f"duplicate unit id {unit.unit_id!r}")
        self._units[unit.unit_id] = unit
        return unit

    def get(self, unit_id: str) -> StepUnit:
        try:
            return self._units[unit_id]
        except KeyError:
            raise UnknownUnit(f"no unit named {unit_id!r}") from None

    def __contains__(self, unit_id: str) -> bool:
        return unit_id in self._units

    def ids(self) -> List[str]:
        return list(self._units)

    def units(self) -> List[StepUnit]:
        return list(self._units.values())


@dataclass(frozen=True)
class Connection:
    """One directed wire: (src unit, out port) feeds (dst unit, in port)."""

    src_unit: str
    src_port: str
    dst_unit: str
    dst_port: str

    def __str__(self) -> str:
        return f"{self.src_unit}.{self.src_port} -> {self.dst_unit}.{self.dst_port}"


@dataclass
class WiringPlan:
    """Validated connections plus a deterministic unit order.

    ``order`` lists unit ids so that, where the dependency graph allows it,
    producers come before consumers.  Cycles are legal (they are what makes
    co-simulation interesting) and are broken at the lexicographically
    smallest unit id so the order is reproducible.
    """

    connections: Tuple[Connection, ...]
    order: Tuple[str, ...] = field(default_factory=tuple)


def validate_wiring(registry: UnitRegistry, connections: Iterable[Connection]) -> WiringPlan:
    """Check every connection against the registry and build a WiringPlan.

    Raises UnknownUnit, UnknownPort, KindMismatch or DuplicateInput with the
    offending connection spelled out.  An input port may be fed by at most
    one connection; fan-out from an output is unrestricted.
    """
    conns = tuple(connections)
    fed: Dict[Tuple[str, str], Connection] = {}
    for conn in conns:
        if conn.src_unit not in registry:
            raise UnknownUnit(f"{conn}: no unit named {conn.src_unit!r}")
        if conn.dst_unit not in registry:
            raise UnknownUnit(f"{conn}: no unit named {conn.dst_unit!r}")
        src = registry.get(conn.src_unit)
        dst = registry.get(conn.dst_unit)
        try:
            out_spec = src.output_spec(conn.src_port)
            in_spec = dst.input_spec(conn.dst_port)
        except UnknownPort as exc:
            raise UnknownPort(f"{conn}: {exc}") from None
        if out_spec.kind is not in_spec.kind:
            raise KindMismatch(
                f"{conn}: {out_spec.kind.value} output feeds {in_spec.kind.value} input"
            )
        key = (conn.dst_unit, conn.dst_port)
        if key in fed:
            raise DuplicateInput(f"{conn}: input already fed by {fed[key]}")
        fed[key] = conn
    order = _topo_order(registry.ids(), conns)
    return WiringPlan(connections=conns, order=order)


def _topo_order(unit_ids: Sequence[str], conns: Sequence[Connection]) -> Tuple[str, ...]:
    deps: Dict[str, set] = {uid: set() for uid in unit_ids}
    for conn in conns:
        if conn.src_unit != conn.dst_unit:
            deps[conn.dst_unit].add(conn.src_unit)
    order: List[str] = []
    remaining = set(unit_ids)
    while remaining:
        ready = sorted(uid for uid in remaining if not (deps[uid] & remaining))
        if not ready:
            # Cycle: peel off the smallest id to keep the order reproducible.
            ready = [min(remaining)]
        order.append(ready[0])
        remaining.discard(ready[0])
    return tuple(order)


def propagate(plan: WiringPlan, registry: UnitRegistry) -> None:
    """Copy every connection's source output into its destination input."""
    for conn in plan.connections:
        value = registry.get(conn.src_unit).out_ports[conn.src_port]
        registry.get(conn.dst_unit).set_input(conn.dst_port, value)


def snapshot_outputs(registry: UnitRegistry) -> Mapping[str, Dict[str, Scalar]]:
    """Copy all output ports, for engines that must read pre-step values."""
    return {uid: dict(unit.out_ports) for uid, unit in zip(registry.ids(), registry.units())}
