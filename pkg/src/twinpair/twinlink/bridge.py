"""BridgeUnit: the co-simulation unit that owns the broker link.

Outgoing: each configured signal is an input port; every step the bridge
packs the current values into one envelope per topic and publishes it,
stamped with its own step count.  A failed publish marks the link down
(and reports it once) but never stops the unit: the twin must keep
running through an outage.

Incoming: each configured entry is an output port fed from the newest
envelope seen on its topic, plus an automatic ``<port>_age`` integer port
counting steps since that topic was last refreshed.  Consumers decide for
themselves how much staleness they tolerate; the bridge never hides that a
value is old, and it holds the last value rather than blanking it (a
frozen reading with a visible age beats a vanishing one).  The envelope's
own step stamp can be routed to a port by the reserved name ``@sim_step``,
which is how forwarded data keeps its provenance across the wire.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from ..simcore import Kind, KindMismatch, PortSpec, Scalar, SimError, StepUnit, coerce
from .frames import Envelope, Payload
from .transport import LinkClient

log = logging.getLogger(__name__)

AGE_NEVER = 10 ** 9
META_SIM_STEP = "@sim_step"

_KINDS = {k.value: k for k in Kind}


@dataclass(frozen=True)
class OutgoingSignal:
    signal: str              # input port name
    topic: str
    kind: Kind
    name: Optional[str] = None  # payload key, defaults to the signal name

    @property
    def payload_name(self) -> str:
        return self.name or self.signal


@dataclass(frozen=True)
class IncomingSignal:
    topic: str
    name: str                # payload key, or META_SIM_STEP for the stamp
    port: str                # output port name
    kind: Kind
    default: Scalar
    hold: str = "last"       # "last" or "default" when the topic goes stale


@dataclass
class LinkConfig:
    outgoing: List[OutgoingSignal] = field(default_factory=list)
    incoming: List[IncomingSignal] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict) -> "LinkConfig":
        outgoing = [
            OutgoingSignal(
                signal=entry["signal"],
                topic=entry["topic"],
                kind=_KINDS[entry.get("kind", "real")],
                name=entry.get("name"),
            )
            for entry in raw.get("outgoing", ())
        ]
        incoming = []
        for entry in raw.get("incoming", ()):
            kind = _KINDS[entry.get("kind", "real")]
            hold = entry.get("hold", "last")
            if hold not in ("last", "default"):
                raise SimError(f"bad hold policy {hold!r} for port {entry['port']!r}")
            incoming.append(
                IncomingSignal(
                    topic=entry["topic"],
                    name=entry["name"],
                    port=entry["port"],
                    kind=kind,
                    default=entry.get("default", PortSpec("x", kind).default()),
                    hold=hold,
                )
            )
        return cls(outgoing=outgoing, incoming=incoming)


class BridgeUnit(StepUnit):
    def __init__(
        self,
        unit_id: str,
        config: LinkConfig,
        client: LinkClient,
        source: str,
        wallclock: Callable[[], str],
        on_link_down: Optional[Callable[[], None]] = None,
    ) -> None:
        self.config = config
        self.client = client
        self.source = source
        self.wallclock = wallclock
        self.on_link_down = on_link_down
        self.link_down = False
        self.extra_payload: Payload = {}
        self._next_seq: Dict[str, int] = {}
        self._latest: Dict[str, Envelope] = {}
        self._fresh: set = set()
        self._age: Dict[str, int] = {}
        self._out_topics: List[str] = []
        for out in config.outgoing:
            if out.topic not in self._out_topics:
                self._out_topics.append(out.topic)
        super().__init__(unit_id)
        for sig in config.incoming:
            self.client.subscribe(sig.topic)

    def inputs(self) -> Sequence[PortSpec]:
        return tuple(PortSpec(o.signal, o.kind) for o in self.config.outgoing)

    def outputs(self) -> Sequence[PortSpec]:
        specs = [
            PortSpec(sig.port, sig.kind, sig.default) for sig in self.config.incoming
        ]
        specs += [
            PortSpec(f"{sig.port}_age", Kind.INTEGER, AGE_NEVER)
            for sig in self.config.incoming
        ]
        return tuple(specs)

    def ingest(self, topic: str, envelope: Envelope) -> None:
        """Offer a received envelope; newest seq per topic wins."""
        current = self._latest.get(topic)
        if current is not None and envelope.seq <= current.seq:
            return
        self._latest[topic] = envelope
        self._fresh.add(topic)

    def do_step(self, step: int, dt: float) -> None:
        self._publish(step)
        self._apply_incoming()

    def _publish(self, step: int) -> None:
        for topic in self._out_topics:
            payload: Payload = {}
            for out in self.config.outgoing:
                if out.topic == topic:
                    payload[out.payload_name] = self.in_ports[out.signal]
            payload.update(self.extra_payload)
            seq = self._next_seq.get(topic, 0)
            self._next_seq[topic] = seq + 1
            envelope = Envelope(
                source=self.source,
                seq=seq,
                sim_step=step,
                wallclock=self.wallclock(),
                payload=payload,
            )
            ok = self.client.publish(topic, envelope)
            if not ok and not self.link_down:
                self.link_down = True
                log.warning("publish to %s failed, link marked down", topic)
                if self.on_link_down is not None:
                    self.on_link_down()

    def _apply_incoming(self) -> None:
        topics = {sig.topic for sig in self.config.incoming}
        for topic in topics:
            if topic in self._fresh:
                self._age[topic] = 0
            elif topic in self._age:
                self._age[topic] = min(self._age[topic] + 1, AGE_NEVER)
        for sig in self.config.incoming:
            envelope = self._latest.get(sig.topic)
            fresh = sig.topic in self._fresh
            if envelope is not None and fresh:
                if sig.name == META_SIM_STEP:
                    self.out_ports[sig.port] = envelope.sim_step
                elif sig.name in envelope.payload:
                    try:
                        self.out_ports[sig.port] = coerce(
                            sig.kind, envelope.payload[sig.name]
                        )
                    except KindMismatch as exc:
                        log.warning("ignoring %s.%s: %s", sig.topic, sig.name, exc)
            elif sig.hold == "default" and not fresh:
                self.out_ports[sig.port] = sig.default
            self.out_ports[f"{sig.port}_age"] = self._age.get(sig.topic, AGE_NEVER)
        self._fresh.clear()
