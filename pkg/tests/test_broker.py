"""TCP broker behaviour, exercised over real sockets on 127.0.0.1."""

import socket
import time

import pytest

from twinpair.twinlink.broker import Broker
from twinpair.twinlink.frames import Envelope, Frame, FrameType, encode_frame
from twinpair.twinlink.transport import TcpLinkClient


@pytest.fixture()
def broker():
    with Broker("127.0.0.1", 0) as b:
        yield b


def client_for(broker, **kw):
    return TcpLinkClient("127.0.0.1", broker.bound_port, **kw)


def env(seq, step=0, payload=None):
    return Envelope(
        source="PT", seq=seq, sim_step=step, wallclock="t", payload=payload or {}
    )


def drain(client, n, timeout=5.0):
    got = []
    deadline = time.monotonic() + timeout
    while len(got) < n and time.monotonic() < deadline:
        msg = client.wait_message(0.2)
        if msg is not None:
            got.append(msg)
    return got


def test_port_zero_picks_a_port(broker):
    assert broker.bound_port != 0


def test_fan_out_excludes_publisher(broker):
    pub = client_for(broker)
    sub = client_for(broker)
    pub.subscribe("pt.out")
    sub.subscribe("pt.out")
    time.sleep(0.1)
    pub.publish("pt.out", env(1))
    got = drain(sub, 1)
    assert len(got) == 1
    assert got[0][1].seq == 1
    # the publisher never hears its own message back
    assert pub.poll_message() is None
    pub.close()
    sub.close()


def test_fifo_per_topic_two_subscribers(broker):
    pub = client_for(broker)
    subs = [client_for(broker), client_for(broker)]
    for s in subs:
        s.subscribe("pt.out")
    time.sleep(0.1)
    n = 200
    for i in range(n):
        assert pub.publish("pt.out", env(i, payload={"v": float(i)}))
    for s in subs:
        got = drain(s, n)
        assert [m[1].seq for m in got] == list(range(n))
        assert [m[1].payload["v"] for m in got] == [float(i) for i in range(n)]
    pub.close()
    for s in subs:
        s.close()


def test_topic_filtering(broker):
    pub = client_for(broker)
    sub = client_for(broker)
    sub.subscribe("dt.out")
    time.sleep(0.1)
    pub.publish("pt.out", env(1))
    pub.publish("dt.out", env(2))
    got = drain(sub, 1)
    assert [m[0] for m in got] == ["dt.out"]
    assert sub.poll_message() is None
    pub.close()
    sub.close()


def test_late_subscriber_misses_earlier_messages(broker):
    pub = client_for(broker)
    time.sleep(0.05)
    pub.publish("pt.out", env(1))
    time.sleep(0.1)
    sub = client_for(broker)
    sub.subscribe("pt.out")
    time.sleep(0.1)
    pub.publish("pt.out", env(2))
    got = drain(sub, 1)
    assert [m[1].seq for m in got] == [2]
    pub.close()
    sub.close()


def test_malformed_line_does_not_kill_connection(broker):
    sub = client_for(broker)
    sub.subscribe("pt.out")
    time.sleep(0.1)
    raw = socket.create_connection(("127.0.0.1", broker.bound_port))
    raw.sendall(b"this is not json\n")
    raw.sendall(b'{"type":"deliver","topic":"pt.out"}\n')  # wrong direction too
    raw.sendall(encode_frame(Frame(FrameType.PUBLISH, "pt.out", env(7))))
    got = drain(sub, 1)
    assert [m[1].seq for m in got] == [7]
    raw.close()
    sub.close()


def test_ping_pong(broker):
    raw = socket.create_connection(("127.0.0.1", broker.bound_port))
    raw.sendall(b'{"type":"ping"}\n')
    raw.settimeout(2.0)
    data = b""
    while b"\n" not in data:
        data += raw.recv(1024)
    assert b'"pong"' in data
    raw.close()


def test_dead_subscriber_gets_dropped(broker):
    pub = client_for(broker)
    sub = client_for(broker)
    sub.subscribe("pt.out")
    time.sleep(0.1)
    sub.close()
    time.sleep(0.1)
    # delivery to the closed socket fails; the broker must shrug it off
    for i in range(5):
        assert pub.publish("pt.out", env(i))
    time.sleep(0.2)
    assert pub.publish("pt.out", env(99))
    pub.close()


def test_client_publish_reports_false_after_broker_stops():
    b = Broker("127.0.0.1", 0)
    b.start()
    pub = TcpLinkClient("127.0.0.1", b.bound_port)
    time.sleep(0.05)
    b.stop()
    deadline = time.monotonic() + 5.0
    ok = True
    while ok and time.monotonic() < deadline:
        ok = pub.publish("pt.out", env(1))
        time.sleep(0.01)
    assert not ok
    assert pub.link_down
    pub.close()
