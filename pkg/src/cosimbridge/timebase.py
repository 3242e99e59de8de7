"""Time and value primitives used everywhere else.

Simulation time and durations are plain integers counting nanoseconds; there
is no float time anywhere, so step arithmetic and timestamp comparisons are
exact. Helpers here convert between that representation and the two textual
forms used at the boundaries:

* ISO-8601 UTC timestamps (``2021-05-06T12:00:00.123456789Z``), up to nine
  fractional digits, offset or Z suffix;
* duration literals with a unit suffix (``2ms``, ``100ms``, ``2s``).

The module also defines the value model for exchanged variables: a tagged
union of integer / real / boolean / text, mirrored by ValueKind, plus the
change-detection equality where reals compare bitwise (NaN equals NaN, and
0.0 differs from -0.0, which is what you want when deciding whether to
republish an input).
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from datetime import date
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Union

from .errors import DurationError, KindMismatch, TimestampError

NS_PER_SECOND = 1_000_000_000

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()

_TIMESTAMP_RE = re.compile(
    r"^(?P<year>\d{4})-(?P<month>\d{2})-(?P<day>\d{2})"
    r"[Tt ]"
    r"(?P<hour>\d{2}):(?P<minute>\d{2}):(?P<second>\d{2})"
    r"(?:\.(?P<fraction>\d+))?"
    r"(?P<offset>[Zz]|[+-]\d{2}:\d{2})$"
)


def parse_timestamp(text: str) -> int:
    """Parse an ISO-8601 timestamp into integer nanoseconds since the Unix epoch.

    Accepts an optional fractional part of 1 to 9 digits and either a ``Z``
    suffix or a ``+HH:MM``/``-HH:MM`` offset. Raises TimestampError naming the
    offending field on anything else. Non-UTC offsets are converted; leap
    seconds are not supported (second must be 00-59).
    """
    if not isinstance(text, str):
        raise TimestampError(f"timestamp must be a string, got {type(text).__name__}")
    m = _TIMESTAMP_RE.match(text.strip())
    if m is None:
        raise TimestampError(f"not an ISO-8601 timestamp: {text!r}")

    year = int(m.group("year"))
    month = int(m.group("month"))
    day = int(m.group("day"))
    if not 1 <= month <= 12:
        raise TimestampError(f"month out of range in {text!r}: {month}")
    try:
        civil = date(year, month, day)
    except ValueError:
        raise TimestampError(f"day out of range in {text!r}: {day}") from None

    hour = int(m.group("hour"))
    minute = int(m.group("minute"))
    second = int(m.group("second"))
    if hour > 23:
        raise TimestampError(f"hour out of range in {text!r}: {hour}")
    if minute > 59:
        raise TimestampError(f"minute out of range in {text!r}: {minute}")
    if second > 59:
        raise TimestampError(f"second out of range in {text!r}: {second}")

    fraction = m.group("fraction") or ""
    if len(fraction) > 9:
        raise TimestampError(
            f"fractional part in {text!r} has {len(fraction)} digits, at most 9 allowed"
        )
    frac_ns = int(fraction.ljust(9, "0")) if fraction else 0

    offset = m.group("offset")
    if offset in ("Z", "z"):
        offset_s = 0
    else:
        sign = 1 if offset[0] == "+" else -1
        off_h = int(offset[1:3])
        off_m = int(offset[4:6])
        if off_h > 23 or off_m > 59:
            raise TimestampError(f"offset out of range in {text!r}: {offset}")
        offset_s = sign * (off_h * 3600 + off_m * 60)

    days = civil.toordinal() - _EPOCH_ORDINAL
    seconds = days * 86400 + hour * 3600 + minute * 60 + second - offset_s
    return seconds * NS_PER_SECOND + frac_ns


def format_timestamp(nanos: int) -> str:
    """Format nanoseconds since the Unix epoch as an ISO-8601 UTC timestamp.

    The fractional part is omitted when zero and otherwise printed with 3, 6
    or 9 digits (whole milli/micro/nanoseconds), so ``format`` then ``parse``
    is the identity on integers.
    """
    seconds, frac = divmod(int(nanos), NS_PER_SECOND)
    days, rem = divmod(seconds, 86400)
    try:
        civil = date.fromordinal(_EPOCH_ORDINAL + days)
    except (ValueError, OverflowError):
        raise TimestampError(f"timestamp out of calendar range: {nanos} ns") from None
    hour, rem = divmod(rem, 3600)
    minute, second = divmod(rem, 60)
    base = f"{civil.year:04d}-{civil.month:02d}-{civil.day:02d}T{hour:02d}:{minute:02d}:{second:02d}"
    if frac == 0:
        return base + "Z"
    if frac % 1_000_000 == 0:
        return f"{base}.{frac // 1_000_000:03d}Z"
    if frac % 1_000 == 0:
        return f"{base}.{frac // 1_000:06d}Z"
    return f"{base}.{frac:09d}Z"


_DURATION_RE = re.compile(r"^\s*(?P<num>\d+(?:\.\d+)?)\s*(?P<unit>ns|us|ms|s|m)\s*$")

_UNIT_NS = {
    "ns": 1,
    "us": 1_000,
    "ms": 1_000_000,
    "s": NS_PER_SECOND,
    "m": 60 * NS_PER_SECOND,
}


def parse_duration(text: str | int) -> int:
    """Parse a duration literal like ``100ms`` or ``2s`` into nanoseconds.

    Bare integers (or digit-only strings) are taken as nanoseconds already.
    Decimal values are converted exactly; anything that does not land on a
    whole nanosecond is rejected rather than rounded.
    """
    if isinstance(text, bool):
        raise DurationError(f"not a duration: {text!r}")
    if isinstance(text, int):
        return text
    if not isinstance(text, str):
        raise DurationError(f"not a duration: {text!r}")
    stripped = text.strip()
    if re.fullmatch(r"-?\d+", stripped):
        return int(stripped)
    m = _DURATION_RE.match(stripped)
    if m is None:
        raise DurationError(
            f"not a duration: {text!r} (expected <number><ns|us|ms|s|m>)"
        )
    try:
        scaled = Decimal(m.group("num")) * _UNIT_NS[m.group("unit")]
    except InvalidOperation:  # pragma: no cover - regex keeps this unreachable
        raise DurationError(f"not a duration: {text!r}") from None
    if scaled != scaled.to_integral_value():
        raise DurationError(f"duration {text!r} is finer than one nanosecond")
    return int(scaled)


def format_duration(nanos: int) -> str:
    """Render nanoseconds with the largest unit that divides them exactly."""
    for unit in ("m", "s", "ms", "us"):
        scale = _UNIT_NS[unit]
        if nanos != 0 and nanos % scale == 0:
            return f"{nanos // scale}{unit}"
    return f"{nanos}ns"


def epoch_map(data_ts: int, scenario_epoch: int) -> int:
    """Map an absolute data timestamp onto the simulation timeline.

    Both arguments are nanoseconds since the Unix epoch; the result is
    nanoseconds of simulation time. Timestamps before the scenario epoch have
    no place on the timeline and raise TimestampError.
    """
    if data_ts < scenario_epoch:
        raise TimestampError(
            f"data timestamp {data_ts} ns precedes scenario epoch {scenario_epoch} ns"
        )
    return data_ts - scenario_epoch


Value = Union[bool, int, float, str]


class ValueKind(Enum):
    INTEGER = "integer"
    REAL = "real"
    BOOLEAN = "boolean"
    TEXT = "text"


class Direction(Enum):
    INPUT = "input"
    OUTPUT = "output"


# bool subclasses int in Python, so boolean has to be checked first wherever
# kinds are inferred or validated.
_KIND_BY_TYPE = {bool: ValueKind.BOOLEAN, int: ValueKind.INTEGER,
                 float: ValueKind.REAL, str: ValueKind.TEXT}


def kind_of(value: Value) -> ValueKind:
    """Return the ValueKind of a value, raising KindMismatch for foreign types."""
    kind = _KIND_BY_TYPE.get(type(value))
    if kind is None:
        raise KindMismatch(f"unsupported value type: {type(value).__name__}")
    return kind


def check_kind(name: str, value: Value, kind: ValueKind) -> None:
    """Validate that ``value`` is exactly of ``kind`` (no int/real coercion)."""
    actual = kind_of(value)
    if actual is not kind:
        raise KindMismatch(
            f"variable {name!r} expects {kind.value}, got {actual.value} ({value!r})"
        )


def values_equal(a: Value, b: Value) -> bool:
    """Equality used for publish-on-change.

    Reals compare by their IEEE-754 bit pattern so NaN==NaN holds and
    0.0 != -0.0; everything else compares normally, with bool and int never
    considered equal to each other.
    """
    if type(a) is not type(b):
        return False
    if isinstance(a, float):
        return struct.pack(">d", a) == struct.pack(">d", b)
    return a == b


@dataclass(frozen=True)
class VariableDecl:
    """One declared exchange variable of the bridge interface."""

    name: str
    kind: ValueKind
    direction: Direction

    def __post_init__(self):
        if not self.name:
            raise ValueError("variable name must be non-empty")
