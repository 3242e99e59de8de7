"""In-process broker: synchronized per-subscription queues with retention.

Delivery rules:

* publish fans out exactly once to every open subscription whose key matches
  (exact string match, no patterns), preserving publisher order;
* publishes on a key with no subscription are retained (up to RETENTION_CAP,
  oldest dropped first) and handed to the next subscription created on that
  key; subscribers arriving after traffic was already delivered do not get a
  replay;
* each subscription buffers at most RETENTION_CAP envelopes, dropping the
  oldest on overflow and counting the drops.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque

from ..errors import FrameTooLarge, TransportClosed, TransportError
from .base import Envelope, MAX_FRAME_BYTES, RETENTION_CAP, validate_routing_key

log = logging.getLogger(__name__)


class SubscriptionQueue:
    """Thread-safe bounded mailbox implementing the Subscription protocol."""

    def __init__(self, capacity: int = RETENTION_CAP):
        self._items: deque[Envelope] = deque()
        self._cond = threading.Condition()
        self._capacity = capacity
        self._closed = False
        self.dropped = 0

    def push(self, envelope: Envelope) -> None:
        with self._cond:
            if self._closed:
                return
            if len(self._items) >= self._capacity:
                self._items.popleft()
                self.dropped += 1
            self._items.append(envelope)
            self._cond.notify_all()

    def poll(self, max_count: int = 1, timeout_ns: int = 0) -> list[Envelope]:
        if max_count < 1:
            raise TransportError(f"max_count must be >= 1, got {max_count}")
        deadline = time.monotonic_ns() + max(0, timeout_ns)
        with self._cond:
            while not self._items:
                if self._closed:
                    raise TransportClosed("subscription is closed")
                remaining = deadline - time.monotonic_ns()
                if remaining <= 0:
                    return []
                self._cond.wait(remaining / 1e9)
            out = []
            while self._items and len(out) < max_count:
                out.append(self._items.popleft())
            return out

    def pending(self) -> int:
        with self._cond:
            return len(self._items)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed


class InMemoryBroker:
    """BrokerHandle implementation backed by plain queues, for local runs."""

    def __init__(self, max_frame: int = MAX_FRAME_BYTES, retention: int = RETENTION_CAP):
        self._lock = threading.Lock()
        self._subs: dict[str, list[SubscriptionQueue]] = {}
        self._retained: dict[str, deque[Envelope]] = {}
        self._max_frame = max_frame
        self._retention = retention
        self._closed = False

    def publish(self, envelope: Envelope) -> None:
        if not isinstance(envelope, Envelope):
            raise TransportError(f"expected Envelope, got {type(envelope).__name__}")
        if len(envelope.payload) > self._max_frame:
            raise FrameTooLarge(
                f"payload of {len(envelope.payload)} bytes exceeds limit {self._max_frame}"
            )
        with self._lock:
            if self._closed:
                raise TransportClosed("broker is closed")
            queues = [q for q in self._subs.get(envelope.routing_key, []) if not q.closed]
            self._subs[envelope.routing_key] = queues
            if queues:
                for q in queues:
                    q.push(envelope)
                return
            retained = self._retained.setdefault(envelope.routing_key, deque())
            if len(retained) >= self._retention:
                retained.popleft()
            retained.append(envelope)

    def subscribe(self, routing_key: str) -> SubscriptionQueue:
        validate_routing_key(routing_key)
        with self._lock:
            if self._closed:
                raise TransportClosed("broker is closed")
            queue = SubscriptionQueue(self._retention)
            backlog = self._retained.pop(routing_key, None)
            if backlog:
                for envelope in backlog:
                    queue.push(envelope)
            self._subs.setdefault(routing_key, []).append(queue)
            return queue

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            for queues in self._subs.values():
                for q in queues:
                    q.close()
            self._subs.clear()
            self._retained.clear()

    @property
    def closed(self) -> bool:
        return self._closed
