"""A small TCP pub/sub broker.

One accept thread plus one reader thread per connection.  Routing holds a
single lock, and each connection's frames are handled by its own reader in
arrival order, so deliveries from one publisher on one topic stay FIFO.
Delivery is at-most-once with no persistence: a subscriber that connects
late starts from the next message, and a send failure drops the subscriber.

Malformed frames are logged and the connection survives; peers should not
be able to take each other down through the broker.
"""

from __future__ import annotations

import logging
import socket
import threading
from typing import List, Optional, Set

from .frames import Frame, FrameType, MalformedFrame, encode_frame, parse_frame

log = logging.getLogger(__name__)

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 5672


class _Conn:
    def __init__(self, sock: socket.socket, peer: str) -> None:
        self.sock = sock
        self.peer = peer
        self.topics: Set[str] = set()
        self.send_lock = threading.Lock()
        self.alive = True


class Broker:
    """Run with ``serve_forever`` or as a context manager around ``start``."""

    def __init__(self, host: str = DEFAULT_HOST, port: int = DEFAULT_PORT) -> None:
        self.host = host
        self.port = port
        self.bound_port: Optional[int] = None
        self._server: Optional[socket.socket] = None
        self._conns: List[_Conn] = []
        self._lock = threading.Lock()
        self._stopping = threading.Event()
        self._accept_thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self._server = socket.create_server((self.host, self.port))
        self.bound_port = self._server.getsockname()[1]
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="broker-accept", daemon=True
        )
        self._accept_thread.start()
        log.info("broker listening on %s:%s", self.host, self.bound_port)

    def stop(self) -> None:
        self._stopping.set()
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            self._drop(conn)
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)

    def __enter__(self) -> "Broker":
        self.start()
        return self

    def __exit__(self, *exc: object) -> None:
        self.stop()

    def serve_forever(self) -> None:
        self.start()
        try:
            self._stopping.wait()
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def _accept_loop(self) -> None:
        assert self._server is not None
        while not self._stopping.is_set():
            try:
                sock, addr = self._server.accept()
            except OSError:
                break
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Conn(sock, f"{addr[0]}:{addr[1]}")
            with self._lock:
                self._conns.append(conn)
            threading.Thread(
                target=self._reader_loop,
                args=(conn,),
                name=f"broker-read-{conn.peer}",
                daemon=True,
            ).start()

    def _reader_loop(self, conn: _Conn) -> None:
        buf = b""
        try:
            while not self._stopping.is_set():
                chunk = conn.sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    self._handle_line(conn, line)
        except OSError:
            pass
        finally:
            self._drop(conn)

    def _handle_line(self, conn: _Conn, line: bytes) -> None:
        if not line.strip():
            return
        try:
            frame = parse_frame(line, from_client=True)
        except MalformedFrame as exc:
            log.warning("malformed frame from %s: %s", conn.peer, exc)
            return
        if frame.type is FrameType.SUBSCRIBE:
            assert frame.topic is not None
            with self._lock:
                conn.topics.add(frame.topic)
        elif frame.type is FrameType.PUBLISH:
            assert frame.topic is not None and frame.envelope is not None
            self._route(conn, frame)
        elif frame.type is FrameType.PING:
            self._send(conn, encode_frame(Frame(FrameType.PONG)))
        # PONG from a client needs no reaction.

    def _route(self, publisher: _Conn, frame: Frame) -> None:
        data = encode_frame(Frame(FrameType.DELIVER, frame.topic, frame.envelope))
        with self._lock:
            targets = [c for c in self._conns if frame.topic in c.topics and c.alive]
        for conn in targets:
            if conn is publisher:
                continue
            if not self._send(conn, data):
                self._drop(conn)

    def _send(self, conn: _Conn, data: bytes) -> bool:
        try:
            with conn.send_lock:
                conn.sock.sendall(data)
            return True
        except OSError as exc:
            log.warning("dropping %s: send failed (%s)", conn.peer, exc)
            return False

    def _drop(self, conn: _Conn) -> None:
        with self._lock:
            if conn in self._conns:
                self._conns.remove(conn)
            conn.alive = False
        try:
            conn.sock.close()
        except OSError:
            pass
