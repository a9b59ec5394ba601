"""Liveness over heartbeats, and the twin operating mode derived from it.

Each twin publishes a monotone counter on its own heartbeat topic.  The
peer watches those counters against a deadline; a configurable number of
consecutive misses means the sender is considered down.  The receiving
twin folds that liveness status, together with the availability of its
local fallback controller, into one of three operating modes:

DT_SYNCED       peer alive, commands from the digital side are trusted
LOCAL_FALLBACK  peer down, a local controller carries on
SAFE_MODE       peer down and no local controller left: stop safely

``decide_mode`` is a pure function so the whole mode machine is testable
without any transport.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Deque, Optional, Sequence

from .simcore import Kind, PortSpec, StepUnit
from .twinlink.frames import Envelope
from .twinlink.transport import LinkClient


class LivenessState(Enum):
    ALIVE = "alive"
    DOWN = "down"


class TwinMode(Enum):
    DT_SYNCED = "dt_synced"
    LOCAL_FALLBACK = "local_fallback"
    SAFE_MODE = "safe_mode"


@dataclass
class ProtocolParams:
    period: float = 0.1
    deadline_factor: float = 2.0
    miss_threshold: int = 3
    resync_steps: int = 3
    handshake_timeout: float = 5.0

    @property
    def deadline(self) -> float:
        return self.deadline_factor * self.period


class LivenessMonitor:
    """Tracks one peer's heartbeat counter.

    Feed it accepted counters via :meth:`accept` and let :meth:`poll` turn
    elapsed time into deadline misses.  The state is a pure function of the
    last ``miss_threshold`` observations: down iff all of them were misses.
    A counter that does not advance is itself recorded as a miss, so a
    stuck or replayed sender cannot look alive.
    """

    def __init__(self, params: ProtocolParams) -> None:
        self.params = params
        self.last_counter = 0
        self._window: Deque[bool] = collections.deque(maxlen=params.miss_threshold)
        self._deadline_at: Optional[float] = None
        self.misses_total = 0

    def observe(self, received: bool) -> LivenessState:
        """Record one observation (True = beat arrived in time)."""
        self._window.append(received)
        if not received:
            self.misses_total += 1
        return self.state

    @property
    def state(self) -> LivenessState:
        if len(self._window) == self._window.maxlen and not any(self._window):
            return LivenessState.DOWN
        return LivenessState.ALIVE

    def accept(self, counter: int, now: float) -> bool:
        """Offer a received counter. Returns True if it advanced.

        An advancing counter re-arms the deadline; a stale or repeated one
        counts as a miss and leaves the deadline untouched.
        """
        if counter > self.last_counter:
            self.last_counter = counter
            self._deadline_at = now + self.params.deadline
            self.observe(True)
            return True
        self.observe(False)
        return False

    def poll(self, now: float) -> int:
        """Convert elapsed time into misses. Returns how many were added.

        Deadlines chain (each miss pushes the next deadline one period
        further out) but stop accumulating once the peer is already down;
        a long outage is still just "down", not a growing debt.
        """
        if self._deadline_at is None:
            return 0
        added = 0
        while now >= self._deadline_at and self.state is not LivenessState.DOWN:
            self.observe(False)
            self._deadline_at += self.params.deadline
            added += 1
        return added

    def force_down(self) -> None:
        """Register a full window of misses (used on handshake timeout)."""
        for _ in range(self.params.miss_threshold):
            self.observe(False)


class HeartbeatUnit(StepUnit):
    """Publishes this twin's liveness counter, one beat per step.

    The counter for step k is k + 1; counter 0 is reserved for the
    pre-handshake hello so a receiver can always tell the two apart.  The
    envelope seq is shared between hellos and beats, keeping the stream
    monotone for any observer on the topic.
    """

    def __init__(
        self,
        unit_id: str,
        client: LinkClient,
        source: str,
        topic: str,
        wallclock: Callable[[], str],
    ) -> None:
        self.client = client
        self.source = source
        self.topic = topic
        self.wallclock = wallclock
        self._next_seq = 0
        super().__init__(unit_id)

    def outputs(self) -> Sequence[PortSpec]:
        return (PortSpec("counter", Kind.INTEGER, 0),)

    def emit_heartbeat(self, counter: int) -> bool:
        envelope = Envelope(
            source=self.source,
            seq=self._next_seq,
            sim_step=self.steps_done,
            wallclock=self.wallclock(),
            payload={"counter": counter},
        )
        self._next_seq += 1
        return self.client.publish(self.topic, envelope)

    def emit_hello(self) -> bool:
        return self.emit_heartbeat(0)

    def do_step(self, step: int, dt: float) -> None:
        counter = step + 1
        self.out_ports["counter"] = counter
        self.emit_heartbeat(counter)


def decide_mode(
    current: TwinMode, liveness: LivenessState, fallback_available: bool
) -> TwinMode:
    """One transition of the operating mode machine.

    Alive peers always win the twin back to DT_SYNCED, in a single call,
    no matter how deep in fallback it was.  *current* is accepted so the
    machine can grow history-dependent rules later, and to make call sites
    read as transitions; today the result does not depend on it.
    """
    del current
    if liveness is LivenessState.ALIVE:
        return TwinMode.DT_SYNCED
    if fallback_available:
        return TwinMode.LOCAL_FALLBACK
    return TwinMode.SAFE_MODE
