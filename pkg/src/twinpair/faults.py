"""Scheduled fault injection.

The only fault kind today is the loss of a software unit: from the given
step on, the unit neither processes nor communicates.  Its output ports
freeze at their last values, which is exactly what a crashed process looks
like to the rest of the system.

An injector is armed per twin.  Arming validates the target eagerly, so a
typo in a scenario fails at load, not mid-run.  Firing is idempotent per
spec: a unit that is already halted is left alone and the duplicate is
logged by the caller, not raised.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

from .simcore import SimError, UnitRegistry

log = logging.getLogger(__name__)

KIND_LOSS_OF_UNIT = "loss_of_software_unit"
_KNOWN_KINDS = frozenset({KIND_LOSS_OF_UNIT})


class UnknownTargetError(SimError):
    pass


class UnknownFaultKind(SimError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    twin: str          # "pt" or "dt"
    unit: str
    at: int            # step boundary at (or after) which the fault fires
    kind: str = KIND_LOSS_OF_UNIT


@dataclass
class _Armed:
    spec: FaultSpec
    fired: bool = False


class FaultInjector:
    """Holds armed faults for one twin and fires them at step boundaries."""

    def __init__(
        self,
        twin: str,
        registry: UnitRegistry,
        on_fire: Optional[Callable[[FaultSpec], None]] = None,
    ) -> None:
        self.twin = twin.lower()
        self.registry = registry
        self.on_fire = on_fire
        self._armed: List[_Armed] = []

    def arm(self, spec: FaultSpec) -> None:
        if spec.twin.lower() != self.twin:
            raise UnknownTargetError(
                f"fault targets twin {spec.twin!r} but this injector is on {self.twin!r}"
            )
        if spec.unit not in self.registry:
            raise UnknownTargetError(
                f"fault targets unit {spec.unit!r} which does not exist on {self.twin!r}"
            )
        if spec.kind not in _KNOWN_KINDS:
            raise UnknownFaultKind(f"unknown fault kind {spec.kind!r}")
        if spec.at < 0:
            raise UnknownTargetError(f"fault step must be non-negative, got {spec.at}")
        self._armed.append(_Armed(spec))

    def on_step_boundary(self, step: int) -> List[FaultSpec]:
        """Fire every due, not-yet-fired fault. Returns what fired."""
        fired: List[FaultSpec] = []
        for armed in self._armed:
            if armed.fired or step < armed.spec.at:
                continue
            armed.fired = True
            self.fire(armed.spec)
            fired.append(armed.spec)
        return fired

    def fire(self, spec: FaultSpec) -> None:
        unit = self.registry.get(spec.unit)
        if unit.halted:
            log.info("unit %s already halted, ignoring duplicate fault", spec.unit)
            return
        unit.halt()
        log.info("halted unit %s on %s at its step %d", spec.unit, spec.twin, unit.steps_done)
        if self.on_fire is not None:
            self.on_fire(spec)
