"""Moving decoded records from a subscription into the step-side queue.

The IncomingQueue is the buffer between transport and step logic: bounded,
ordered by data timestamp, safe for one producer plus one consumer. Overflow
evicts the oldest record (newest data wins, matching the broker's retention
rule), and out-of-order arrivals are refused outright so the queue order
invariant can never silently break; both event kinds are counted.

Two ingestion strategies fill it from a subscription. fill_unthreaded runs on
the caller's thread, pulling one envelope at a time until a stop condition on
the queue holds or a deadline passes (so a step can stop at the first record
it can actually use, leaving the rest on the transport). start_consumer_thread
moves the same loop onto a background thread that drains continuously;
failures there land on the handle's error attribute for the step thread to
inspect, since raising on a daemon thread would vanish.
"""

from __future__ import annotations

import logging
import threading
import time
from bisect import bisect_right
from typing import Callable

from .errors import IngressError, TransportClosed
from .transport import Subscription, TimestampedRecord, decode_record
from enum import Enum

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 100_000

#: Consumer thread poll slice; short enough for prompt shutdown, long enough
#: to stay off the CPU when traffic is idle.
_POLL_SLICE_NS = 50_000_000


class OfferOutcome(Enum):
    ACCEPTED = "accepted"
    DROPPED_OLDEST = "dropped_oldest"
    REJECTED_OUT_OF_ORDER = "rejected_out_of_order"


class IncomingQueue:
    """Bounded, timestamp-ordered record buffer with change notification."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._buf: list[TimestampedRecord] = []
        self._head = 0  # index of the oldest live record in _buf
        self._cond = threading.Condition()
        self._version = 0
        self._dropped = 0
        self._rejected = 0

    def offer(self, record: TimestampedRecord) -> OfferOutcome:
        """Append a record; total over all inputs, never raises on bad order."""
        with self._cond:
            if self._head < len(self._buf) and record.data_ts < self._buf[-1].data_ts:
                self._rejected += 1
                log.warning(
                    "rejected out-of-order record seq %d: data_ts %d < newest %d",
                    record.seqno, record.data_ts, self._buf[-1].data_ts,
                )
                return OfferOutcome.REJECTED_OUT_OF_ORDER
            outcome = OfferOutcome.ACCEPTED
            if len(self._buf) - self._head >= self.capacity:
                self._head += 1
                self._dropped += 1
                outcome = OfferOutcome.DROPPED_OLDEST
            self._buf.append(record)
            if self._head > 4096 and self._head * 2 > len(self._buf):
                # Rebind rather than delete in place: times_view snapshots
                # hold a reference to the old list and index into it without
                # the lock, so the elements they see must never move.
                self._buf = self._buf[self._head:]
                self._head = 0
            self._version += 1
            self._cond.notify_all()
            return outcome

    def __len__(self) -> int:
        with self._cond:
            return len(self._buf) - self._head

    @property
    def dropped_count(self) -> int:
        with self._cond:
            return self._dropped

    @property
    def rejected_count(self) -> int:
        with self._cond:
            return self._rejected

    @property
    def version(self) -> int:
        with self._cond:
            return self._version

    def eligible_count(self, max_data_ts: int) -> int:
        """How many queued records have data_ts <= max_data_ts (a prefix)."""
        with self._cond:
            idx = bisect_right(self._buf, max_data_ts, lo=self._head,
                               key=lambda r: r.data_ts)
            return idx - self._head

    def first(self, n: int) -> list[TimestampedRecord]:
        with self._cond:
            return self._buf[self._head: self._head + n]

    def pop_first(self, n: int) -> list[TimestampedRecord]:
        with self._cond:
            live = len(self._buf) - self._head
            if n > live:
                raise IngressError(f"cannot pop {n} records, only {live} queued")
            taken = self._buf[self._head: self._head + n]
            self._head += n
            if self._head == len(self._buf):
                # Rebind for the same reason as the compaction in offer.
                self._buf = []
                self._head = 0
            self._version += 1
            return taken

    def times_view(self, epoch_ns: int) -> "_QueueTimesView":
        """Snapshot of queued record times relative to epoch_ns, oldest first.

        The view is an indexable sequence suitable for bisection; it costs
        O(1) to build regardless of queue length. It reflects the queue at
        the moment of the call and is meant to be consulted once and
        discarded, before the caller pops anything.
        """
        with self._cond:
            return _QueueTimesView(
                self._buf, self._head, len(self._buf) - self._head, epoch_ns
            )

    def snapshot(self) -> list[TimestampedRecord]:
        with self._cond:
            return self._buf[self._head:]

    def wait_for_change(self, seen_version: int, timeout_ns: int) -> int:
        """Block until the queue changes past seen_version or the slice ends."""
        with self._cond:
            if self._version != seen_version:
                return self._version
            self._cond.wait(max(0, timeout_ns) / 1e9)
            return self._version


class _QueueTimesView:
    """Read-only indexable window onto a queue's record times.

    Holds its own reference to the backing list plus fixed bounds, so it
    stays coherent even if the queue compacts or grows after the snapshot
    is taken; it simply will not see later arrivals.
    """

    __slots__ = ("_buf", "_start", "_count", "_epoch")

    def __init__(self, buf: list[TimestampedRecord], start: int, count: int,
                 epoch_ns: int):
        self._buf = buf
        self._start = start
        self._count = count
        self._epoch = epoch_ns

    def __len__(self) -> int:
        return self._count

    def __getitem__(self, index: int) -> int:
        if not 0 <= index < self._count:
            raise IndexError(index)
        return self._buf[self._start + index].data_ts - self._epoch


def fill_unthreaded(
    queue: IncomingQueue,
    subscription: Subscription,
    stop: Callable[[IncomingQueue], bool],
    timeout_ns: int = 0,
    decode: Callable[[bytes], TimestampedRecord] = decode_record,
) -> int:
    """Pull envelopes into the queue until stop(queue) holds or time runs out.

    Envelopes are taken one at a time and stop is re-evaluated after each, so
    a caller that only needs the next usable record leaves the remainder on
    the transport. Returns the number of records ingested. Decode and
    transport failures propagate wrapped in IngressError.
    """
    count = 0
    deadline = time.monotonic_ns() + max(0, timeout_ns)
    while not stop(queue):
        remaining = deadline - time.monotonic_ns()
        try:
            envelopes = subscription.poll(1, max(0, remaining))
        except TransportClosed:
            raise
        except Exception as exc:
            raise IngressError(f"transport failure while filling: {exc}") from exc
        if not envelopes:
            break  # poll only returns empty at its deadline
        try:
            record = decode(envelopes[0].payload)
        except Exception as exc:
            raise IngressError(f"undecodable envelope while filling: {exc}") from exc
        queue.offer(record)
        count += 1
    return count


class ConsumerHandle:
    """Owner handle for a background consumer; errors surface on .error."""

    def __init__(self, queue: IncomingQueue, subscription: Subscription,
                 decode: Callable[[bytes], TimestampedRecord]):
        self._queue = queue
        self._subscription = subscription
        self._decode = decode
        self._stop = threading.Event()
        self.error: Exception | None = None
        self.ingested = 0
        self._thread = threading.Thread(target=self._run, name="ingress-consumer",
                                        daemon=True)

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                envelopes = self._subscription.poll(64, _POLL_SLICE_NS)
                for envelope in envelopes:
                    self._queue.offer(self._decode(envelope.payload))
                    self.ingested += 1
            except TransportClosed:
                if not self._stop.is_set():
                    self.error = IngressError("subscription closed under the consumer")
                return
            except Exception as exc:  # decode errors included
                self.error = exc
                return

    def shutdown(self) -> None:
        """Stop and join (within 1s); safe to call more than once."""
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=1.0)
            if self._thread.is_alive():
                log.warning("consumer thread did not stop within 1s")
        if getattr(self._queue, "_consumer_handle", None) is self:
            self._queue._consumer_handle = None

    @property
    def alive(self) -> bool:
        return self._thread.is_alive()


def start_consumer_thread(
    queue: IncomingQueue,
    subscription: Subscription,
    decode: Callable[[bytes], TimestampedRecord] = decode_record,
) -> ConsumerHandle:
    """Start the background consumer for a queue; one at a time per queue."""
    if getattr(queue, "_consumer_handle", None) is not None:
        raise IngressError("a consumer thread is already attached to this queue")
    handle = ConsumerHandle(queue, subscription, decode)
    queue._consumer_handle = handle
    handle._thread.start()
    return handle
