"""Client-side transports.

``TcpLinkClient`` talks to the TCP broker; ``MemoryHub`` plus
``MemoryLinkClient`` give the same interface inside one process, with
synchronous delivery.  Both push received (topic, envelope) pairs into a
queue that the owner drains with ``poll_message``/``wait_message``.

The in-process hub still encodes each publish to wire bytes and parses it
back, so anything that works in one process works identically over TCP.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from collections import deque
from typing import Deque, List, Optional, Tuple

from .frames import Envelope, Frame, FrameType, MalformedFrame, encode_frame, parse_frame

log = logging.getLogger(__name__)


class LinkClient:
    """What the runtime needs from a transport."""

    def subscribe(self, topic: str) -> None:
        raise NotImplementedError

    def publish(self, topic: str, envelope: Envelope) -> bool:
        """Hand an envelope to the broker. False means the link is down."""
        raise NotImplementedError

    def poll_message(self) -> Optional[Tuple[str, Envelope]]:
        raise NotImplementedError

    def wait_message(self, timeout: float) -> Optional[Tuple[str, Envelope]]:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class TcpLinkClient(LinkClient):
    def __init__(
        self,
        host: str,
        port: int,
        *,
        connect_timeout: float = 10.0,
        write_timeout: float = 5.0,
    ) -> None:
        self.host = host
        self.port = port
        self.link_down = False
        self._write_timeout = write_timeout
        self._sock = self._connect(connect_timeout)
        self._send_lock = threading.Lock()
        self._cond = threading.Condition()
        self._inbox: Deque[Tuple[str, Envelope]] = deque()
        self._closed = False
        self._reader = threading.Thread(
            target=self._reader_loop, name=f"link-read-{host}:{port}", daemon=True
        )
        self._reader.start()

    def _connect(self, connect_timeout: float) -> socket.socket:
        deadline = time.monotonic() + connect_timeout
        last_err: Optional[OSError] = None
        while time.monotonic() < deadline:
            try:
                sock = socket.create_connection((self.host, self.port), timeout=2.0)
                sock.settimeout(None)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                # Bound writes without putting the socket in timeout mode,
                # which would also bound the reader thread's recv.
                sec = int(self._write_timeout)
                usec = int((self._write_timeout - sec) * 1e6)
                sock.setsockopt(
                    socket.SOL_SOCKET, socket.SO_SNDTIMEO, struct.pack("ll", sec, usec)
                )
                return sock
            except OSError as exc:
                last_err = exc
                time.sleep(0.05)
        raise ConnectionError(
            f"could not reach broker at {self.host}:{self.port}: {last_err}"
        )

    def _reader_loop(self) -> None:
        buf = b""
        try:
            while True:
                chunk = self._sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if not line.strip():
                        continue
                    try:
                        frame = parse_frame(line, from_client=False)
                    except MalformedFrame as exc:
                        log.warning("malformed frame from broker: %s", exc)
                        continue
                    if frame.type is FrameType.DELIVER:
                        assert frame.topic is not None and frame.envelope is not None
                        with self._cond:
                            self._inbox.append((frame.topic, frame.envelope))
                            self._cond.notify_all()
                    elif frame.type is FrameType.PING:
                        self._send(encode_frame(Frame(FrameType.PONG)))
        except OSError:
            pass
        finally:
            self.link_down = True
            with self._cond:
                self._cond.notify_all()

    def _send(self, data: bytes) -> bool:
        if self.link_down:
            return False
        try:
            with self._send_lock:
                self._sock.sendall(data)
            return True
        except OSError as exc:
            log.warning("link to broker down: %s", exc)
            self.link_down = True
            return False

    def subscribe(self, topic: str) -> None:
        self._send(encode_frame(Frame(FrameType.SUBSCRIBE, topic)))

    def publish(self, topic: str, envelope: Envelope) -> bool:
        return self._send(encode_frame(Frame(FrameType.PUBLISH, topic, envelope)))

    def poll_message(self) -> Optional[Tuple[str, Envelope]]:
        with self._cond:
            if self._inbox:
                return self._inbox.popleft()
        return None

    def wait_message(self, timeout: float) -> Optional[Tuple[str, Envelope]]:
        deadline = time.monotonic() + timeout
        with self._cond:
            while not self._inbox:
                if self.link_down:
                    return None
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)
            return self._inbox.popleft()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass


class MemoryHub:
    """In-process stand-in for broker plus network.

    ``pause``/``resume`` buffer deliveries to simulate an outage;
    ``fail_client`` makes one client's publishes report a dead link.
    """

    def __init__(self) -> None:
        self._clients: List["MemoryLinkClient"] = []
        self._paused = False
        self._held: List[Tuple["MemoryLinkClient", str, Envelope]] = []

    def attach(self, client: "MemoryLinkClient") -> None:
        self._clients.append(client)

    def pause(self) -> None:
        self._paused = True

    def resume(self, deliver_held: bool = False) -> None:
        self._paused = False
        held, self._held = self._held, []
        if deliver_held:
            for publisher, topic, envelope in held:
                self._fan_out(publisher, topic, envelope)

    def publish(self, publisher: "MemoryLinkClient", topic: str, envelope: Envelope) -> None:
        # Round-trip through the wire format so in-process behaviour cannot
        # diverge from TCP behaviour.
        data = encode_frame(Frame(FrameType.PUBLISH, topic, envelope))
        frame = parse_frame(data, from_client=True)
        assert frame.topic is not None and frame.envelope is not None
        if self._paused:
            self._held.append((publisher, frame.topic, frame.envelope))
            return
        self._fan_out(publisher, frame.topic, frame.envelope)

    def _fan_out(self, publisher: "MemoryLinkClient", topic: str, envelope: Envelope) -> None:
        for client in self._clients:
            if client is publisher:
                continue
            if topic in client.topics:
                client._deliver(topic, envelope)


class MemoryLinkClient(LinkClient):
    def __init__(self, hub: MemoryHub, name: str = "") -> None:
        self.hub = hub
        self.name = name
        self.topics: set = set()
        self.link_down = False
        self._inbox: Deque[Tuple[str, Envelope]] = deque()
        hub.attach(self)

    def _deliver(self, topic: str, envelope: Envelope) -> None:
        self._inbox.append((topic, envelope))

    def subscribe(self, topic: str) -> None:
        self.topics.add(topic)

    def publish(self, topic: str, envelope: Envelope) -> bool:
        if self.link_down:
            return False
        self.hub.publish(self, topic, envelope)
        return True

    def poll_message(self) -> Optional[Tuple[str, Envelope]]:
        if self._inbox:
            return self._inbox.popleft()
        return None

    def wait_message(self, timeout: float) -> Optional[Tuple[str, Envelope]]:
        # Synchronous hub: nothing will arrive while we wait.
        return self.poll_message()

    def close(self) -> None:
        pass
