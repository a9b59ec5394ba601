"""Stepping engines and step triggering.

Two disciplines are offered:

ParallelExchange
    All units step against their current inputs, then outputs propagate.
    Every consumer therefore sees values that are one step old.  Cheap to
    reason about and safe with cycles; used on the digital side.

SequentialImmediate
    Units step one at a time in a fixed order; each unit's inputs are
    refreshed from already-stepped producers immediately before it steps.
    Consumers later in the order see same-step values.  Used on the
    physical side, where the control chain must close within the step.

Independent of the discipline, a :class:`TriggerController` decides *when*
steps happen: either one step per remote message (the digital side follows
the physical one) or at a fixed local rate (fallback when the peer is gone).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

from .simcore import Scalar, SimError, UnitRegistry, WiringPlan, propagate


class EngineKind(Enum):
    PARALLEL_EXCHANGE = "parallel_exchange"
    SEQUENTIAL_IMMEDIATE = "sequential_immediate"


class EmptyOrderError(SimError):
    pass


@dataclass
class StepReport:
    step: int
    outputs: Dict[str, Dict[str, Scalar]] = field(default_factory=dict)


def jacobi_step(registry: UnitRegistry, plan: WiringPlan, dt: float) -> StepReport:
    """One ParallelExchange step: step everything, then exchange."""
    units = registry.units()
    step = units[0].steps_done if units else 0
    for unit in units:
        unit.step(dt)
    propagate(plan, registry)
    return StepReport(step=step, outputs={u.unit_id: dict(u.out_ports) for u in units})


def sequential_step(
    registry: UnitRegistry, order: Sequence[str], plan: WiringPlan, dt: float
) -> StepReport:
    """One SequentialImmediate step following *order*.

    *order* must name every registered unit exactly once; the engine
    refuses to guess an order because on the physical side it encodes the
    control chain.
    """
    if not order:
        raise EmptyOrderError("sequential engine needs an explicit unit order")
    ids = registry.ids()
    if sorted(order) != sorted(ids):
        raise EmptyOrderError(
            f"order {list(order)!r} does not cover units {ids!r} exactly once"
        )
    by_dst: Dict[str, List] = {}
    for conn in plan.connections:
        by_dst.setdefault(conn.dst_unit, []).append(conn)
    step = registry.get(order[0]).steps_done
    for uid in order:
        unit = registry.get(uid)
        for conn in by_dst.get(uid, ()):
            value = registry.get(conn.src_unit).out_ports[conn.src_port]
            unit.set_input(conn.dst_port, value)
        unit.step(dt)
    return StepReport(
        step=step, outputs={u.unit_id: dict(u.out_ports) for u in registry.units()}
    )


class TriggerMode(Enum):
    REMOTE_DRIVEN = "remote_driven"
    LOCAL_FIXED_RATE = "local_fixed_rate"


class TriggerController:
    """Decides whether a step is due at a given moment.

    In REMOTE_DRIVEN mode a step fires once per call to :meth:`remote_tick`.
    In LOCAL_FIXED_RATE mode steps fire on a period measured against the
    clock handed in by the caller (which may be virtual).  Switching to the
    fixed rate arms an immediate first step, so a twin that loses its peer
    resumes without waiting a full period.
    """

    def __init__(self, period: float) -> None:
        self.period = period
        self.mode = TriggerMode.REMOTE_DRIVEN
        self._pending_remote = 0
        self._next_due: Optional[float] = None

    def set_trigger_mode(self, mode: TriggerMode, now: float) -> None:
        if mode is self.mode:
            return
        self.mode = mode
        if mode is TriggerMode.LOCAL_FIXED_RATE:
            self._next_due = now  # first step immediately
        else:
            self._pending_remote = 0
            self._next_due = None

    def remote_tick(self) -> None:
        self._pending_remote += 1

    def step_due(self, now: float) -> bool:
        if self.mode is TriggerMode.REMOTE_DRIVEN:
            return self._pending_remote > 0
        assert self._next_due is not None
        return now >= self._next_due

    def consume(self, now: float) -> None:
        """Account for one executed step."""
        if self.mode is TriggerMode.REMOTE_DRIVEN:
            if self._pending_remote > 0:
                self._pending_remote -= 1
        else:
            assert self._next_due is not None
            self._next_due += self.period
            if self._next_due < now:
                # Do not try to catch up after a stall; skip ahead.
                self._next_due = now


@dataclass
class RunSummary:
    steps: int
    wall_seconds: float


def run_loop(
    *,
    poll: Callable[[], None],
    step_once: Callable[[], None],
    trigger: TriggerController,
    should_stop: Callable[[], bool],
    clock: Callable[[], float] = time.monotonic,
    idle_sleep: float = 0.001,
    sleep: Callable[[float], None] = time.sleep,
) -> RunSummary:
    """Drive a twin until *should_stop* says so.

    Each iteration polls the transport (delivering messages, which may call
    ``trigger.remote_tick``), then executes at most one step if one is due.
    The loop never busy-spins: with nothing due it sleeps *idle_sleep*.
    """
    started = clock()
    steps = 0
    while not should_stop():
        poll()
        now = clock()
        if trigger.step_due(now):
            trigger.consume(now)
            step_once()
            steps += 1
        else:
            sleep(idle_sleep)
    return RunSummary(steps=steps, wall_seconds=clock() - started)
