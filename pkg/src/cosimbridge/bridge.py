"""Fixed-step bridge between a timestamped stream and a stepped simulation.

The bridge subscribes to one routing key, queues inbound records in data
timestamp order, and on every step decides what to present as output for
the step's end horizon T:

* advance: consume queued records whose simulation time is at or before T,
  up to the lookahead bound, and present the last consumed one;
* hold: keep presenting the current record while it is no older than the
  staleness window (maxage) at T;
* wait: with nothing eligible and nothing fresh enough to hold, block for
  new data until a timeout budget is spent, then fail the step.

Two policies order those outcomes differently. The conservative policy
(V1_CONSERVATIVE) prefers holding: while the current record is within
maxage it never consumes, so output lags arrivals. Move-to-latest
(V2_MOVE_TO_LATEST) prefers advancing whenever anything is eligible and
holds only as a fallback.

Record timestamps are mapped onto the simulation axis by subtracting an
epoch: the configured one if set, otherwise the timestamp of the first
record seen. Outbound publications (changed inputs) are stamped with the
configured epoch plus current simulation time, or plain simulation time
when no epoch is configured.

The step loop never reads the time module directly; it observes whichever
clock it was given, so a run against a VirtualClock is a deterministic
function of the scheduled publications.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .clocks import WallClock
from .errors import (
    DecodeError,
    EncodeError,
    IngressError,
    LifecycleError,
    NotYetStepped,
    StepTimeout,
    UnknownVariable,
)
from .ingress import (
    DEFAULT_CAPACITY,
    ConsumerHandle,
    IncomingQueue,
    fill_unthreaded,
    start_consumer_thread,
)
from .timebase import (
    Direction,
    Value,
    VariableDecl,
    check_kind,
    epoch_map,
    values_equal,
)
from .transport import (
    BrokerHandle,
    Envelope,
    Subscription,
    TimestampedRecord,
    decode_record,
    encode_record,
    validate_routing_key,
)

log = logging.getLogger(__name__)


class Policy(Enum):
    V1_CONSERVATIVE = "v1"
    V2_MOVE_TO_LATEST = "v2"


class IngestMode(Enum):
    THREADED = "threaded"
    UNTHREADED = "unthreaded"


class Lifecycle(Enum):
    CONFIGURED = "configured"
    INITIALIZED = "initialized"
    STEPPING = "stepping"
    TERMINATED = "terminated"


class DecisionKind(Enum):
    HOLD = "hold"
    ADVANCE = "advance"
    NEED_DATA = "need_data"


@dataclass(frozen=True)
class Decision:
    """Outcome of one selection: what to do and how many records it takes."""

    kind: DecisionKind
    new_output_index: int | None = None
    consumed: int = 0


def select_output(
    available_times: Sequence[int],
    current_time_ns: int | None,
    horizon_ns: int,
    policy: Policy,
    maxage_ns: int,
    lookahead: int,
) -> Decision:
    """Pure selection rule applied at one step horizon.

    available_times must be the queued records' simulation times in
    nondecreasing order (any indexable sequence will do; only O(log n)
    elements are touched). current_time_ns is the simulation time of the
    record currently presented, or None before the first selection.

    Eligibility is inclusive: a record timed exactly at the horizon counts.
    On advance, the consumed records are the first `consumed` entries and
    the record at new_output_index becomes the new output.
    """
    if lookahead < 1:
        raise ValueError("lookahead must be at least 1")
    eligible = bisect_right(available_times, horizon_ns)
    fresh = current_time_ns is not None and current_time_ns + maxage_ns >= horizon_ns

    def advance() -> Decision:
        take = min(eligible, lookahead)
        return Decision(DecisionKind.ADVANCE, new_output_index=take - 1, consumed=take)

    if policy is Policy.V1_CONSERVATIVE:
        if fresh:
            return Decision(DecisionKind.HOLD)
        if eligible:
            return advance()
        return Decision(DecisionKind.NEED_DATA)
    if policy is Policy.V2_MOVE_TO_LATEST:
        if eligible:
            return advance()
        if fresh:
            return Decision(DecisionKind.HOLD)
        return Decision(DecisionKind.NEED_DATA)
    raise ValueError(f"unknown policy {policy!r}")


@dataclass(frozen=True)
class BridgeConfig:
    """Static bridge parameters; all durations are nanoseconds."""

    maxage_ns: int
    lookahead: int = 1
    timeout_ns: int = 1_000_000_000
    policy: Policy = Policy.V2_MOVE_TO_LATEST
    ingest_mode: IngestMode = IngestMode.THREADED
    queue_capacity: int = DEFAULT_CAPACITY
    routing_key_in: str = "cosim.data"
    routing_key_out: str = "cosim.out"
    variables: tuple[VariableDecl, ...] = ()
    scenario_epoch_ns: int | None = None

    def __post_init__(self):
        if self.maxage_ns < 0:
            raise ValueError("maxage must not be negative")
        if self.lookahead < 1:
            raise ValueError("lookahead must be at least 1")
        if self.timeout_ns <= 0:
            raise ValueError("timeout must be positive")
        if self.queue_capacity < 1:
            raise ValueError("queue capacity must be at least 1")
        validate_routing_key(self.routing_key_in)
        validate_routing_key(self.routing_key_out)
        if self.routing_key_in == self.routing_key_out:
            raise ValueError(
                "inbound and outbound routing keys must differ, otherwise the "
                "bridge would ingest its own publications"
            )
        names = [decl.name for decl in self.variables]
        if len(names) != len(set(names)):
            raise ValueError("variable names must be unique")

    def inputs(self) -> tuple[VariableDecl, ...]:
        return tuple(d for d in self.variables if d.direction is Direction.INPUT)

    def outputs(self) -> tuple[VariableDecl, ...]:
        return tuple(d for d in self.variables if d.direction is Direction.OUTPUT)


@dataclass(frozen=True)
class StepReport:
    """What one completed step did, for traces and assertions."""

    step_index: int
    sim_time_end_ns: int
    wall_duration_ns: int
    consumed: int
    queue_len_exit: int
    out_seqno: int
    out_ts_ns: int
    held: bool
    published: int
    dropped_so_far: int


class Bridge:
    """One data bridge instance; drive it with setup, do_step, terminate."""

    def __init__(self, config: BridgeConfig, broker: BrokerHandle, clock=None):
        self._config = config
        self._broker = broker
        self._clock = clock if clock is not None else WallClock()
        self._lifecycle = Lifecycle.CONFIGURED
        self._queue: IncomingQueue | None = None
        self._subscription: Subscription | None = None
        self._consumer: ConsumerHandle | None = None
        self._first_data_ts: int | None = None
        self._current: TimestampedRecord | None = None
        self._current_simtime: int | None = None
        self._input_decls = {d.name: d for d in config.inputs()}
        self._output_decls = {d.name: d for d in config.outputs()}
        self._input_values: dict[str, Value] = {}
        self._last_published: dict[str, Value] = {}
        self._published_once = False
        self._pub_seqno = 0
        self._step_index = 0
        self._sim_time_ns = 0

    @property
    def lifecycle(self) -> Lifecycle:
        return self._lifecycle

    @property
    def config(self) -> BridgeConfig:
        return self._config

    @property
    def queue(self) -> IncomingQueue:
        if self._queue is None:
            raise LifecycleError("the bridge has not been set up")
        return self._queue

    @property
    def current_output(self) -> TimestampedRecord | None:
        return self._current

    @property
    def current_output_time_ns(self) -> int | None:
        return self._current_simtime

    # -- lifecycle ---------------------------------------------------------

    def setup(self) -> "Bridge":
        """Subscribe and get ready to step; Configured -> Initialized."""
        if self._lifecycle is not Lifecycle.CONFIGURED:
            raise LifecycleError(f"setup is not allowed in state {self._lifecycle.value}")
        self._queue = IncomingQueue(self._config.queue_capacity)
        self._subscription = self._broker.subscribe(self._config.routing_key_in)
        if self._config.ingest_mode is IngestMode.THREADED and not self._clock.virtual:
            self._consumer = start_consumer_thread(
                self._queue, self._subscription, decode=self._decode_validated
            )
        self._lifecycle = Lifecycle.INITIALIZED
        return self

    def terminate(self) -> None:
        """Release the subscription and consumer; safe to call twice."""
        if self._lifecycle is Lifecycle.TERMINATED:
            return
        if self._consumer is not None:
            self._consumer.shutdown()
            self._consumer = None
        if self._subscription is not None:
            self._subscription.close()
        self._lifecycle = Lifecycle.TERMINATED

    # -- variable access ---------------------------------------------------

    def set_input(self, name: str, value: Value) -> None:
        if self._lifecycle not in (Lifecycle.INITIALIZED, Lifecycle.STEPPING):
            raise LifecycleError(
                f"set_input is not allowed in state {self._lifecycle.value}"
            )
        decl = self._input_decls.get(name)
        if decl is None:
            raise UnknownVariable(f"no input variable named {name!r}")
        check_kind(name, value, decl.kind)
        if isinstance(value, float) and not math.isfinite(value):
            # The wire format cannot carry non-finite reals, so fail here
            # rather than on some later step's publication.
            raise EncodeError(f"input {name!r} must be finite, got {value!r}")
        self._input_values[name] = value

    def get_output(self, name: str) -> Value:
        if name not in self._output_decls:
            raise UnknownVariable(f"no output variable named {name!r}")
        if self._current is None:
            raise NotYetStepped(
                f"output {name!r} read before the first completed step"
            )
        return self._current.values[name]

    def get_outputs(self) -> dict[str, Value] | None:
        """All declared outputs from the current record, or None before one."""
        if self._current is None:
            return None
        return {name: self._current.values[name] for name in self._output_decls}

    # -- stepping ----------------------------------------------------------

    def do_step(self, current_time_ns: int, step_size_ns: int) -> StepReport:
        """Run one step ending at current_time_ns + step_size_ns.

        Publishes changed inputs first, then ingests and selects. Raises
        StepTimeout when no usable record arrives within the timeout budget;
        the step is then unfinished and the run should stop.
        """
        if self._lifecycle not in (Lifecycle.INITIALIZED, Lifecycle.STEPPING):
            raise LifecycleError(
                f"do_step is not allowed in state {self._lifecycle.value}"
            )
        if step_size_ns <= 0:
            raise ValueError("step size must be positive")
        assert self._queue is not None and self._subscription is not None

        started_ns = self._clock.now_ns()
        self._check_consumer()
        published = self._publish_changed_inputs(current_time_ns)
        horizon = current_time_ns + step_size_ns
        deadline: int | None = None
        wait_slice = max(1, min(self._config.timeout_ns // 10, 10_000_000))

        while True:
            self._check_consumer()
            self._ingest_pass(horizon)
            decision = self._select(horizon)
            if decision.kind is not DecisionKind.NEED_DATA:
                break
            now = self._clock.now_ns()
            if deadline is None:
                deadline = now + self._config.timeout_ns
            if now >= deadline:
                raise StepTimeout(
                    horizon,
                    len(self._queue),
                    self._queue.dropped_count,
                    self._queue.rejected_count,
                )
            self._wait_for_data(horizon, deadline, wait_slice)

        if decision.kind is DecisionKind.ADVANCE:
            records = self._queue.pop_first(decision.consumed)
            self._current = records[-1]
            epoch = self._epoch_in()
            assert epoch is not None
            self._current_simtime = self._current.data_ts - epoch
            consumed = decision.consumed
            held = False
        else:
            consumed = 0
            held = True
        assert self._current is not None and self._current_simtime is not None

        self._lifecycle = Lifecycle.STEPPING
        self._step_index += 1
        self._sim_time_ns = horizon
        return StepReport(
            step_index=self._step_index,
            sim_time_end_ns=horizon,
            wall_duration_ns=self._clock.now_ns() - started_ns,
            consumed=consumed,
            queue_len_exit=len(self._queue),
            out_seqno=self._current.seqno,
            out_ts_ns=self._current_simtime,
            held=held,
            published=published,
            dropped_so_far=self._queue.dropped_count,
        )

    # -- internals ---------------------------------------------------------

    def _epoch_in(self) -> int | None:
        """Epoch for mapping inbound timestamps, None while undiscoverable."""
        if self._config.scenario_epoch_ns is not None:
            return self._config.scenario_epoch_ns
        return self._first_data_ts

    def _epoch_out(self) -> int:
        """Epoch for stamping outbound publications; never the learned one."""
        if self._config.scenario_epoch_ns is not None:
            return self._config.scenario_epoch_ns
        return 0

    def _decode_validated(self, payload: bytes) -> TimestampedRecord:
        record = decode_record(payload)
        for name, decl in self._output_decls.items():
            if name not in record.values:
                raise DecodeError(
                    f"record seqno {record.seqno} is missing declared output {name!r}"
                )
            check_kind(name, record.values[name], decl.kind)
        if self._config.scenario_epoch_ns is not None:
            epoch_map(record.data_ts, self._config.scenario_epoch_ns)
        if self._first_data_ts is None:
            self._first_data_ts = record.data_ts
        return record

    def _check_consumer(self) -> None:
        if self._consumer is not None and self._consumer.error is not None:
            raise IngressError(
                f"background consumer failed: {self._consumer.error}"
            ) from self._consumer.error

    def _publish_changed_inputs(self, current_time_ns: int) -> int:
        if not self._input_values:
            return 0
        if self._published_once:
            changed = {
                name: value
                for name, value in self._input_values.items()
                if name not in self._last_published
                or not values_equal(value, self._last_published[name])
            }
        else:
            changed = dict(self._input_values)
        if not changed:
            return 0
        self._pub_seqno += 1
        record = TimestampedRecord(
            data_ts=self._epoch_out() + current_time_ns,
            seqno=self._pub_seqno,
            values=changed,
        )
        self._broker.publish(
            Envelope(self._config.routing_key_out, encode_record(record))
        )
        self._last_published.update(changed)
        self._published_once = True
        return 1

    def _fill_stop(self, horizon_ns: int):
        """Stop condition for unthreaded fills: enough to decide this step."""

        def stop(queue: IncomingQueue) -> bool:
            epoch = self._epoch_in()
            if epoch is not None and queue.eligible_count(epoch + horizon_ns) > 0:
                return True
            return (
                self._config.policy is Policy.V1_CONSERVATIVE
                and self._current_simtime is not None
                and self._current_simtime + self._config.maxage_ns >= horizon_ns
            )

        return stop

    def _ingest_pass(self, horizon_ns: int) -> None:
        """Move whatever is already available from the transport to the queue."""
        if self._clock.virtual:
            fill_unthreaded(
                self._queue,
                self._subscription,
                stop=lambda queue: False,
                timeout_ns=0,
                decode=self._decode_validated,
            )
        elif self._config.ingest_mode is IngestMode.UNTHREADED:
            fill_unthreaded(
                self._queue,
                self._subscription,
                stop=self._fill_stop(horizon_ns),
                timeout_ns=0,
                decode=self._decode_validated,
            )
        # In threaded mode the consumer thread keeps the queue current.

    def _wait_for_data(self, horizon_ns: int, deadline_ns: int, slice_ns: int) -> None:
        """Block a little for new data, bounded by the step's deadline."""
        if self._clock.virtual:
            self._clock.advance_to_next_event(deadline_ns)
            return
        remaining = max(0, deadline_ns - self._clock.now_ns())
        budget = min(slice_ns, remaining)
        if self._config.ingest_mode is IngestMode.THREADED:
            self._queue.wait_for_change(self._queue.version, budget)
        else:
            fill_unthreaded(
                self._queue,
                self._subscription,
                stop=self._fill_stop(horizon_ns),
                timeout_ns=budget,
                decode=self._decode_validated,
            )

    def _select(self, horizon_ns: int) -> Decision:
        epoch = self._epoch_in()
        times: Sequence[int] = () if epoch is None else self._queue.times_view(epoch)
        return select_output(
            times,
            self._current_simtime,
            horizon_ns,
            self._config.policy,
            self._config.maxage_ns,
            self._config.lookahead,
        )
