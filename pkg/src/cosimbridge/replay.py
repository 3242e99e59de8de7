"""Replay schedules: timestamped records plus the instants to publish them.

A schedule is the full description of a data source for a run: record k
carries its own data timestamp (simulation axis) and is published at a wall
or virtual instant (execution axis). Keeping the two axes separate is what
lets one scenario express late, bursty, or gappy streams.

Synthetic schedules follow one convention throughout: record k (1-based) is
published at k * wall_period and carries data timestamp
base + (k - 1) * data_spacing, so the first record lands exactly on the
simulation start when the epoch is learned from it. The optional gap model
adds a fixed extra data-time offset after every gap_every records, modelling
a source that pauses without changing its publication cadence.
"""

from __future__ import annotations

import csv
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ScenarioError, TransportClosed
from .timebase import Value, parse_timestamp
from .transport import BrokerHandle, Envelope, TimestampedRecord, encode_record

DEFAULT_BASE_TS_NS = parse_timestamp("2021-01-01T00:00:00Z")

WIDE_REAL_CHANNELS = 107
WIDE_INT_CHANNELS = 10


@dataclass(frozen=True)
class TimedRecord:
    """One scheduled publication: when to send and what."""

    publish_ns: int
    record: TimestampedRecord

    def __post_init__(self):
        if self.publish_ns < 0:
            raise ScenarioError("publish instants must not be negative")


@dataclass(frozen=True)
class ReplaySchedule:
    """Ordered publications; both axes must be nondecreasing."""

    entries: tuple[TimedRecord, ...]

    def __post_init__(self):
        for i in range(1, len(self.entries)):
            if self.entries[i].publish_ns < self.entries[i - 1].publish_ns:
                raise ScenarioError(
                    f"publish instants regress at entry {i + 1}: "
                    f"{self.entries[i].publish_ns} after {self.entries[i - 1].publish_ns}"
                )
            if self.entries[i].record.data_ts < self.entries[i - 1].record.data_ts:
                raise ScenarioError(
                    f"record timestamps regress at entry {i + 1}: "
                    f"{self.entries[i].record.data_ts} after "
                    f"{self.entries[i - 1].record.data_ts}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def records(self) -> list[TimestampedRecord]:
        return [entry.record for entry in self.entries]

    def to_publications(self) -> list[tuple[int, int, int]]:
        """(publish_ns, data_ts, seqno) triples, the reference model's input."""
        return [
            (entry.publish_ns, entry.record.data_ts, entry.record.seqno)
            for entry in self.entries
        ]

    def register_virtual(self, clock, broker: BrokerHandle, routing_key: str) -> None:
        """Schedule every publication as a virtual-clock event."""
        for entry in self.entries:
            payload = encode_record(entry.record)
            clock.schedule(
                entry.publish_ns,
                lambda p=payload: broker.publish(Envelope(routing_key, p)),
            )

    @property
    def last_publish_ns(self) -> int:
        return self.entries[-1].publish_ns if self.entries else 0


def _wide_values(rng: random.Random) -> dict[str, Value]:
    values: dict[str, Value] = {}
    for i in range(WIDE_REAL_CHANNELS):
        values[f"analog_{i:03d}"] = rng.uniform(-10.0, 10.0)
    for i in range(WIDE_INT_CHANNELS):
        values[f"digital_{i:02d}"] = rng.randint(0, 1023)
    return values


def synthetic_schedule(
    count: int,
    wall_period_ns: int,
    data_spacing_ns: int,
    base_ts_ns: int = DEFAULT_BASE_TS_NS,
    shape: str = "single",
    seed: int = 0,
    gap_every: int | None = None,
    gap_extra_ns: int = 0,
) -> ReplaySchedule:
    """Build the standard generated stream; see the module docstring."""
    if count < 0:
        raise ScenarioError("count must not be negative")
    if wall_period_ns < 1:
        raise ScenarioError("wall_period must be at least 1 ns")
    if data_spacing_ns < 0:
        raise ScenarioError("data_spacing must not be negative")
    if gap_every is not None and gap_every < 1:
        raise ScenarioError("gap_every must be at least 1")
    if gap_extra_ns < 0:
        raise ScenarioError("gap_extra must not be negative")
    if shape not in ("single", "wide"):
        raise ScenarioError(f"unknown record shape {shape!r}")

    rng = random.Random(seed)
    entries = []
    for k in range(1, count + 1):
        data_ts = base_ts_ns + (k - 1) * data_spacing_ns
        if gap_every is not None:
            data_ts += ((k - 1) // gap_every) * gap_extra_ns
        if shape == "wide":
            values = _wide_values(rng)
        else:
            values = {"value": float(k)}
        entries.append(
            TimedRecord(
                publish_ns=k * wall_period_ns,
                record=TimestampedRecord(data_ts=data_ts, seqno=k, values=values),
            )
        )
    return ReplaySchedule(tuple(entries))


def schedule_records(
    records: Iterable[TimestampedRecord], wall_period_ns: int
) -> ReplaySchedule:
    """Publish pre-existing records at a steady cadence, first at one period."""
    if wall_period_ns < 1:
        raise ScenarioError("wall_period must be at least 1 ns")
    entries = tuple(
        TimedRecord(publish_ns=k * wall_period_ns, record=record)
        for k, record in enumerate(records, start=1)
    )
    return ReplaySchedule(entries)


def _parse_cell(text: str) -> Value:
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text, 10)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_record_ts(text: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        return parse_timestamp(text)


def read_csv_records(path: str | Path) -> list[TimestampedRecord]:
    """Load records from a delimited file.

    The header must start with seqno and timestamp, followed by one column
    per value name. Timestamps may be integer nanoseconds or calendar form;
    cells parse as bool (true/false), int, real, or text, in that order.
    Errors name the 1-based data row they were found on.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ScenarioError(f"{path}: file is empty") from None
        if len(header) < 3 or header[0] != "seqno" or header[1] != "timestamp":
            raise ScenarioError(
                f"{path}: header must be seqno,timestamp,<name>... got {header!r}"
            )
        names = header[2:]
        if len(set(names)) != len(names):
            raise ScenarioError(f"{path}: duplicate value columns in header")

        records = []
        for row_number, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ScenarioError(
                    f"{path} row {row_number}: expected {len(header)} cells, got {len(row)}"
                )
            try:
                seqno = int(row[0], 10)
                data_ts = _parse_record_ts(row[1])
                values = {name: _parse_cell(cell) for name, cell in zip(names, row[2:])}
                records.append(
                    TimestampedRecord(data_ts=data_ts, seqno=seqno, values=values)
                )
            except (ValueError, TypeError) as exc:
                raise ScenarioError(f"{path} row {row_number}: {exc}") from exc
        return records


class WallclockReplayer:
    """Background thread publishing a schedule against real time.

    Instants are absolute offsets from the moment start() ran, so one slow
    publication does not shift the rest of the schedule.
    """

    def __init__(self, broker: BrokerHandle, routing_key: str, schedule: ReplaySchedule):
        self._broker = broker
        self._routing_key = routing_key
        self._schedule = schedule
        self._stop = threading.Event()
        self._thread = threading.Thread(
            target=self._run, name="wallclock-replayer", daemon=True
        )
        self.published = 0
        self.error: Exception | None = None

    def start(self) -> "WallclockReplayer":
        self._thread.start()
        return self

    def _run(self) -> None:
        start_ns = time.monotonic_ns()
        try:
            for entry in self._schedule.entries:
                target = start_ns + entry.publish_ns
                while not self._stop.is_set():
                    remaining = target - time.monotonic_ns()
                    if remaining <= 0:
                        break
                    time.sleep(min(remaining, 50_000_000) / 1e9)
                if self._stop.is_set():
                    return
                self._broker.publish(
                    Envelope(self._routing_key, encode_record(entry.record))
                )
                self.published += 1
        except TransportClosed:
            if not self._stop.is_set():
                self.error = TransportClosed("broker closed under the replayer")
        except Exception as exc:
            self.error = exc

    def stop(self, join_timeout_s: float = 2.0) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=join_timeout_s)

    @property
    def done(self) -> bool:
        return not self._thread.is_alive()
