"""Wire format: newline-delimited JSON frames.

Every frame is one JSON object on one line, UTF-8.  Serialisation is pinned
(sorted keys, no spaces, NaN rejected) so that the same envelope always
produces the same bytes and floats survive a round trip bit for bit.

Frame types:

subscribe   client -> broker   {"type": "subscribe", "topic": t}
publish     client -> broker   {"type": "publish", "topic": t, "envelope": e}
deliver     broker -> client   {"type": "deliver", "topic": t, "envelope": e}
ping/pong   either direction   {"type": "ping"} / {"type": "pong"}

An envelope is versioned and carries a flat scalar payload:

    {"version": 1, "source": "PT", "seq": 7, "sim_step": 6,
     "wallclock": "2026-08-16T08:36:36", "payload": {"velocity": 0.5}}

``source`` is strictly "PT" or "DT".  ``seq`` must increase per
(source, topic) pair; the broker does not enforce that, receivers do.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Union

Payload = Dict[str, Union[float, int, bool, str]]

TOPIC_PT_OUT = "pt.out"
TOPIC_DT_OUT = "dt.out"
TOPIC_PT_HEARTBEAT = "pt.heartbeat"
TOPIC_DT_HEARTBEAT = "dt.heartbeat"

_SOURCES = ("PT", "DT")
_TOPIC_CHARS = frozenset("abcdefghijklmnopqrstuvwxyz0123456789._-")


class MalformedFrame(Exception):
    pass


class FrameType(Enum):
    SUBSCRIBE = "subscribe"
    PUBLISH = "publish"
    DELIVER = "deliver"
    PING = "ping"
    PONG = "pong"


@dataclass(frozen=True)
class Envelope:
    source: str
    seq: int
    sim_step: int
    wallclock: str
    payload: Payload = field(default_factory=dict)
    version: int = 1


@dataclass(frozen=True)
class Frame:
    type: FrameType
    topic: Optional[str] = None
    envelope: Optional[Envelope] = None


def valid_topic(topic: str) -> bool:
    return bool(topic) and set(topic) <= _TOPIC_CHARS


def _check_payload(payload: object) -> Payload:
    if not isinstance(payload, dict):
        raise MalformedFrame("payload must be an object")
    out: Payload = {}
    for key, value in payload.items():
        if not isinstance(key, str):
            raise MalformedFrame("payload keys must be strings")
        if isinstance(value, bool) or isinstance(value, (int, float, str)):
            out[key] = value
        else:
            raise MalformedFrame(f"payload value for {key!r} must be a scalar")
    return out


def _check_envelope(raw: object) -> Envelope:
    if not isinstance(raw, dict):
        raise MalformedFrame("envelope must be an object")
    if raw.get("version") != 1:
        raise MalformedFrame(f"unsupported envelope version {raw.get('version')!r}")
    source = raw.get("source")
    if source not in _SOURCES:
        raise MalformedFrame(f"source must be one of {_SOURCES}, got {source!r}")
    seq = raw.get("seq")
    sim_step = raw.get("sim_step")
    for label, value in (("seq", seq), ("sim_step", sim_step)):
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise MalformedFrame(f"{label} must be a non-negative integer")
    wallclock = raw.get("wallclock")
    if not isinstance(wallclock, str) or not wallclock:
        raise MalformedFrame("wallclock must be a non-empty string")
    payload = _check_payload(raw.get("payload", {}))
    extra = set(raw) - {"version", "source", "seq", "sim_step", "wallclock", "payload"}
    if extra:
        raise MalformedFrame(f"unexpected envelope fields {sorted(extra)}")
    return Envelope(
        source=source, seq=seq, sim_step=sim_step, wallclock=wallclock, payload=payload
    )


def encode_frame(frame: Frame) -> bytes:
    obj: Dict[str, object] = {"type": frame.type.value}
    if frame.type in (FrameType.SUBSCRIBE, FrameType.PUBLISH, FrameType.DELIVER):
        if frame.topic is None or not valid_topic(frame.topic):
            raise MalformedFrame(f"{frame.type.value} frame needs a valid topic")
        obj["topic"] = frame.topic
    if frame.type in (FrameType.PUBLISH, FrameType.DELIVER):
        env = frame.envelope
        if env is None:
            raise MalformedFrame(f"{frame.type.value} frame needs an envelope")
        obj["envelope"] = {
            "version": env.version,
            "source": env.source,
            "seq": env.seq,
            "sim_step": env.sim_step,
            "wallclock": env.wallclock,
            "payload": env.payload,
        }
    line = json.dumps(obj, separators=(",", ":"), sort_keys=True, allow_nan=False)
    return line.encode("utf-8") + b"\n"


def parse_frame(data: Union[bytes, str], *, from_client: Optional[bool] = None) -> Frame:
    """Parse one line into a Frame.

    *from_client* enforces direction: clients may not send deliver frames
    and the broker never sends subscribe/publish.  Pass None to accept any
    direction (tests do).
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"not utf-8: {exc}") from None
    else:
        text = data
    text = text.strip()
    if not text:
        raise MalformedFrame("empty line")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFrame(f"bad json: {exc}") from None
    if not isinstance(raw, dict):
        raise MalformedFrame("frame must be a json object")
    type_name = raw.get("type")
    try:
        ftype = FrameType(type_name)
    except ValueError:
        raise MalformedFrame(f"unknown frame type {type_name!r}") from None
    if from_client is True and ftype is FrameType.DELIVER:
        raise MalformedFrame("clients may not send deliver frames")
    if from_client is False and ftype in (FrameType.SUBSCRIBE, FrameType.PUBLISH):
        raise MalformedFrame(f"broker may not send {ftype.value} frames")

    topic: Optional[str] = None
    envelope: Optional[Envelope] = None
    allowed = {"type"}
    if ftype in (FrameType.SUBSCRIBE, FrameType.PUBLISH, FrameType.DELIVER):
        allowed.add("topic")
        topic_raw = raw.get("topic")
        if not isinstance(topic_raw, str) or not valid_topic(topic_raw):
            raise MalformedFrame(f"bad topic {topic_raw!r}")
        topic = topic_raw
    if ftype in (FrameType.PUBLISH, FrameType.DELIVER):
        allowed.add("envelope")
        envelope = _check_envelope(raw.get("envelope"))
    extra = set(raw) - allowed
    if extra:
        raise MalformedFrame(f"unexpected frame fields {sorted(extra)}")
    return Frame(type=ftype, topic=topic, envelope=envelope)
