"""Minimal TCP broker speaking newline-delimited JSON frames.

Protocol (one JSON object per line, UTF-8, payloads base64):

    client -> server   {"op":"pub","key":K,"payload":B64}
                       {"op":"sub","key":K}
    server -> client   {"op":"msg","key":K,"payload":B64}
                       {"op":"ok"}
                       {"op":"err","reason":R}

Each connection may hold at most one subscription; publishing is allowed on
any connection and is acknowledged with ok/err. Frames above MAX_FRAME_BYTES
are refused. The server is a thin shell around InMemoryBroker, so retention
and fan-out behave exactly like the in-process transport.
"""

from __future__ import annotations

import base64
import json
import logging
import queue
import socket
import threading

from ..errors import FrameTooLarge, TransportClosed, TransportError
from .base import DEFAULT_HOST, DEFAULT_PORT, Envelope, MAX_FRAME_BYTES
from .memory import InMemoryBroker, SubscriptionQueue

log = logging.getLogger(__name__)

# Allowance for JSON/base64 framing overhead on top of the payload cap.
_LINE_LIMIT = MAX_FRAME_BYTES + 4096

_REPLY_TIMEOUT_S = 30.0


def _frame(doc: dict) -> bytes:
    return json.dumps(doc, separators=(",", ":")).encode("utf-8") + b"\n"


class TcpBrokerServer:
    """Serves the broker protocol on a TCP port (default 127.0.0.1:5673)."""

    def __init__(self, host: str = DEFAULT_HOST, port: int = DEFAULT_PORT,
                 broker: InMemoryBroker | None = None):
        self._broker = broker if broker is not None else InMemoryBroker()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self.host, self.port = self._listener.getsockname()[:2]
        self._accept_thread: threading.Thread | None = None
        self._conns: set[socket.socket] = set()
        self._lock = threading.Lock()
        self._closed = False

    def start(self) -> None:
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="tcp-broker-accept", daemon=True
        )
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, addr = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                if self._closed:
                    conn.close()
                    return
                self._conns.add(conn)
            threading.Thread(
                target=self._serve_connection, args=(conn, addr),
                name=f"tcp-broker-conn-{addr[1]}", daemon=True,
            ).start()

    def _serve_connection(self, conn: socket.socket, addr) -> None:
        reader = conn.makefile("rb")
        write_lock = threading.Lock()
        subscription: SubscriptionQueue | None = None
        pump: threading.Thread | None = None

        def send(doc: dict) -> None:
            with write_lock:
                conn.sendall(_frame(doc))

        try:
            while True:
                line = reader.readline(_LINE_LIMIT)
                if not line:
                    return
                if not line.endswith(b"\n") and len(line) >= _LINE_LIMIT:
                    send({"op": "err", "reason": "frame too large"})
                    return
                try:
                    doc = json.loads(line)
                    op = doc.get("op")
                    if op == "pub":
                        payload = base64.standard_b64decode(doc["payload"])
                        self._broker.publish(Envelope(doc["key"], payload))
                        send({"op": "ok"})
                    elif op == "sub":
                        if subscription is not None:
                            send({"op": "err", "reason": "one subscription per connection"})
                            continue
                        subscription = self._broker.subscribe(doc["key"])
                        send({"op": "ok"})
                        pump = threading.Thread(
                            target=self._pump, args=(subscription, doc["key"], send),
                            name="tcp-broker-pump", daemon=True,
                        )
                        pump.start()
                    else:
                        send({"op": "err", "reason": f"unknown op {op!r}"})
                except (TransportError, KeyError, ValueError, TypeError) as exc:
                    try:
                        send({"op": "err", "reason": str(exc) or type(exc).__name__})
                    except OSError:
                        return
        except OSError:
            return
        finally:
            if subscription is not None:
                subscription.close()
            reader.close()
            conn.close()
            with self._lock:
                self._conns.discard(conn)

    def _pump(self, subscription: SubscriptionQueue, key: str, send) -> None:
        while True:
            try:
                envelopes = subscription.poll(max_count=128, timeout_ns=100_000_000)
            except TransportClosed:
                return
            try:
                for env in envelopes:
                    send({"op": "msg", "key": key,
                          "payload": base64.standard_b64encode(env.payload).decode("ascii")})
            except OSError:
                subscription.close()
                return

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        self._broker.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=1.0)


class TcpBrokerClient:
    """BrokerHandle over a TCP connection to a TcpBrokerServer."""

    def __init__(self, host: str = DEFAULT_HOST, port: int = DEFAULT_PORT,
                 connect_timeout_s: float = 5.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout_s)
        except OSError as exc:
            raise TransportError(f"cannot connect to broker at {host}:{port}: {exc}") from exc
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = self._sock.makefile("rb")
        self._send_lock = threading.Lock()
        self._replies: queue.Queue[dict] = queue.Queue()
        self._subscription: SubscriptionQueue | None = None
        self._sub_key: str | None = None
        self._closed = False
        self._reader_thread = threading.Thread(
            target=self._read_loop, name="tcp-broker-client-reader", daemon=True
        )
        self._reader_thread.start()

    def _read_loop(self) -> None:
        try:
            while True:
                line = self._reader.readline(_LINE_LIMIT)
                if not line:
                    break
                try:
                    doc = json.loads(line)
                except ValueError:
                    log.warning("dropping unparseable broker frame (%d bytes)", len(line))
                    continue
                if doc.get("op") == "msg":
                    if self._subscription is not None:
                        payload = base64.standard_b64decode(doc.get("payload", ""))
                        self._subscription.push(Envelope(doc.get("key", self._sub_key), payload))
                else:
                    self._replies.put(doc)
        except OSError:
            pass
        finally:
            self._mark_closed()

    def _mark_closed(self) -> None:
        self._closed = True
        if self._subscription is not None:
            self._subscription.close()
        self._replies.put({"op": "err", "reason": "connection closed"})

    def _request(self, doc: dict) -> None:
        if self._closed:
            raise TransportClosed("broker connection is closed")
        with self._send_lock:
            try:
                self._sock.sendall(_frame(doc))
            except OSError as exc:
                self._mark_closed()
                raise TransportClosed(f"broker connection lost: {exc}") from exc
            try:
                reply = self._replies.get(timeout=_REPLY_TIMEOUT_S)
            except queue.Empty:
                raise TransportError("timed out waiting for broker acknowledgement") from None
        if reply.get("op") == "err":
            reason = reply.get("reason", "unknown error")
            if "closed" in reason and self._closed:
                raise TransportClosed(reason)
            raise TransportError(f"broker refused request: {reason}")

    def publish(self, envelope: Envelope) -> None:
        if len(envelope.payload) > MAX_FRAME_BYTES:
            raise FrameTooLarge(
                f"payload of {len(envelope.payload)} bytes exceeds limit {MAX_FRAME_BYTES}"
            )
        self._request({
            "op": "pub",
            "key": envelope.routing_key,
            "payload": base64.standard_b64encode(envelope.payload).decode("ascii"),
        })

    def subscribe(self, routing_key: str) -> SubscriptionQueue:
        if self._subscription is not None:
            raise TransportError("one subscription per connection; open another client")
        # Mailbox must exist before the ok arrives: the server may start
        # pumping retained envelopes immediately after acknowledging.
        self._subscription = SubscriptionQueue()
        self._sub_key = routing_key
        try:
            self._request({"op": "sub", "key": routing_key})
        except TransportError:
            self._subscription = None
            self._sub_key = None
            raise
        return self._subscription

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._subscription is not None:
            self._subscription.close()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
