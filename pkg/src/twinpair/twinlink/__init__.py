"""Broker-based messaging between the two twins.

frames
    Wire format: line-delimited JSON frames carrying typed envelopes.
broker
    A small TCP pub/sub broker with topic fan-out.
transport
    Client side: a TCP client for the broker and an in-process hub with the
    same interface for single-process runs.
bridge
    A co-simulation unit that maps ports onto topics in both directions.
"""

from .frames import (
    Envelope,
    Frame,
    FrameType,
    MalformedFrame,
    encode_frame,
    parse_frame,
)
from .transport import LinkClient, MemoryHub, MemoryLinkClient, TcpLinkClient
from .broker import Broker
from .bridge import BridgeUnit, LinkConfig

__all__ = [
    "Envelope",
    "Frame",
    "FrameType",
    "MalformedFrame",
    "encode_frame",
    "parse_frame",
    "LinkClient",
    "MemoryHub",
    "MemoryLinkClient",
    "TcpLinkClient",
    "Broker",
    "BridgeUnit",
    "LinkConfig",
]
