"""Ingress tests: queue bounds and ordering, fill loop, consumer thread."""

from __future__ import annotations

import logging
import time

import pytest
from hypothesis import given, strategies as st

from cosimbridge.errors import IngressError
from cosimbridge.ingress import (
    IncomingQueue,
    OfferOutcome,
    fill_unthreaded,
    start_consumer_thread,
)
from cosimbridge.transport import (
    Envelope,
    InMemoryBroker,
    TimestampedRecord,
    encode_record,
)


def rec(ts, seq=0, value=0):
    return TimestampedRecord(data_ts=ts, seqno=seq, values={"v": value})


def test_offer_accepts_in_order_and_ties():
    q = IncomingQueue(capacity=10)
    assert q.offer(rec(100)) is OfferOutcome.ACCEPTED
    assert q.offer(rec(100)) is OfferOutcome.ACCEPTED  # equal timestamps allowed
    assert q.offer(rec(150)) is OfferOutcome.ACCEPTED
    assert len(q) == 3


def test_offer_rejects_out_of_order_and_logs(caplog):
    q = IncomingQueue(capacity=10)
    q.offer(rec(100, seq=1))
    with caplog.at_level(logging.WARNING):
        outcome = q.offer(rec(99, seq=2))
    assert outcome is OfferOutcome.REJECTED_OUT_OF_ORDER
    assert q.rejected_count == 1
    assert len(q) == 1
    assert any("out-of-order" in r.message for r in caplog.records)


def test_overflow_drops_oldest_keeps_newest():
    q = IncomingQueue(capacity=1000)
    for i in range(1, 5001):
        q.offer(rec(i, seq=i))
    assert len(q) == 1000
    assert q.dropped_count == 4000
    kept = q.snapshot()
    assert kept[0].seqno == 4001 and kept[-1].seqno == 5000


@given(
    st.lists(st.integers(min_value=0, max_value=50), min_size=0, max_size=60),
    st.integers(min_value=1, max_value=10),
)
def test_conservation_under_any_offer_sequence(timestamps, capacity):
    q = IncomingQueue(capacity=capacity)
    for i, ts in enumerate(timestamps):
        q.offer(rec(ts, seq=i))
    assert q.dropped_count + q.rejected_count + len(q) == len(timestamps)
    snap = q.snapshot()
    assert all(a.data_ts <= b.data_ts for a, b in zip(snap, snap[1:]))
    assert len(snap) <= capacity


def test_eligible_count_and_pop():
    q = IncomingQueue()
    for ts in (10, 20, 30, 40):
        q.offer(rec(ts))
    assert q.eligible_count(5) == 0
    assert q.eligible_count(20) == 2
    assert q.eligible_count(99) == 4
    popped = q.pop_first(2)
    assert [r.data_ts for r in popped] == [10, 20]
    assert q.eligible_count(99) == 2
    with pytest.raises(IngressError):
        q.pop_first(3)


def test_wait_for_change_returns_on_offer():
    q = IncomingQueue()
    v0 = q.version
    start = time.monotonic()
    assert q.wait_for_change(v0, timeout_ns=30_000_000) == v0  # nothing happened
    assert time.monotonic() - start < 0.25
    q.offer(rec(1))
    assert q.wait_for_change(v0, timeout_ns=0) != v0


def _preloaded_broker(n, retention=None):
    broker = InMemoryBroker(retention=retention or max(n, 1000))
    sub = broker.subscribe("k")
    for i in range(1, n + 1):
        broker.publish(Envelope("k", encode_record(rec(i, seq=i, value=i))))
    return broker, sub


def test_fill_nothing_pending_returns_zero():
    _, sub = _preloaded_broker(0)
    q = IncomingQueue()
    assert fill_unthreaded(q, sub, stop=lambda _q: False, timeout_ns=0) == 0


def test_fill_stops_after_first_match():
    _, sub = _preloaded_broker(50)
    q = IncomingQueue()
    ingested = fill_unthreaded(q, sub, stop=lambda _q: len(_q) > 0, timeout_ns=0)
    assert ingested == 1
    assert len(q) == 1
    assert sub.pending() == 49


def test_fill_drains_all_when_stop_never_holds():
    _, sub = _preloaded_broker(50)
    q = IncomingQueue()
    ingested = fill_unthreaded(q, sub, stop=lambda _q: False, timeout_ns=0)
    assert ingested == 50
    assert [r.seqno for r in q.snapshot()] == list(range(1, 51))


def test_fill_wraps_decode_errors():
    broker = InMemoryBroker()
    sub = broker.subscribe("k")
    broker.publish(Envelope("k", b"not json"))
    q = IncomingQueue()
    with pytest.raises(IngressError):
        fill_unthreaded(q, sub, stop=lambda _q: False, timeout_ns=0)


def test_consumer_thread_matches_unthreaded_fill():
    n = 500
    _, sub_a = _preloaded_broker(n)
    q_a = IncomingQueue()
    fill_unthreaded(q_a, sub_a, stop=lambda _q: False, timeout_ns=0)

    _, sub_b = _preloaded_broker(n)
    q_b = IncomingQueue()
    handle = start_consumer_thread(q_b, sub_b)
    deadline = time.monotonic() + 5
    while handle.ingested < n and time.monotonic() < deadline:
        time.sleep(0.01)
    handle.shutdown()
    assert handle.error is None
    assert q_b.snapshot() == q_a.snapshot()


def test_consumer_thread_overflow_counts_drops():
    # The queue, not the transport, must do the dropping: retention is raised
    # so all records survive to the offer call.
    n, cap = 200_000, 100_000
    _, sub = _preloaded_broker(n, retention=n)
    q = IncomingQueue(capacity=cap)
    ingested = fill_unthreaded(q, sub, stop=lambda _q: False, timeout_ns=0)
    assert ingested == n
    assert len(q) == cap
    assert q.dropped_count == n - cap
    snap = q.snapshot()
    assert snap[0].seqno == n - cap + 1 and snap[-1].seqno == n


def test_consumer_error_lands_on_side_channel():
    broker = InMemoryBroker()
    sub = broker.subscribe("k")
    q = IncomingQueue()
    handle = start_consumer_thread(q, sub)
    broker.publish(Envelope("k", b"garbage"))
    deadline = time.monotonic() + 5
    while handle.error is None and time.monotonic() < deadline:
        time.sleep(0.01)
    assert handle.error is not None
    handle.shutdown()
    assert not handle.alive


def test_double_start_is_an_error():
    broker = InMemoryBroker()
    q = IncomingQueue()
    handle = start_consumer_thread(q, broker.subscribe("k"))
    with pytest.raises(IngressError):
        start_consumer_thread(q, broker.subscribe("k"))
    handle.shutdown()
    handle.shutdown()  # idempotent
    # after shutdown a new consumer may attach
    handle2 = start_consumer_thread(q, broker.subscribe("k"))
    handle2.shutdown()


def test_shutdown_joins_quickly():
    broker = InMemoryBroker()
    q = IncomingQueue()
    handle = start_consumer_thread(q, broker.subscribe("k"))
    start = time.monotonic()
    handle.shutdown()
    assert time.monotonic() - start < 1.0
    assert not handle.alive
