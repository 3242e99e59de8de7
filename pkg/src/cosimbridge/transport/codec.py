"""Wire codec for timestamped value records.

The canonical form is a single UTF-8 JSON object with fixed top-level key
order and lexicographically sorted value names, no insignificant whitespace
and no trailing newline:

    {"timestamp":"1970-01-01T00:00:00Z","seqno":1,"values":{"x":1.5}}

Encoding is strict (non-finite reals are refused); decoding is liberal about
extra whitespace and unknown keys but reports missing/mistyped fields by name
and malformed JSON with the byte offset of the failure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

from ..errors import DecodeError, EncodeError
from ..timebase import Value, format_timestamp, kind_of, parse_timestamp


@dataclass(frozen=True)
class TimestampedRecord:
    """One sample: absolute data timestamp (ns), sequence number, named values."""

    data_ts: int
    seqno: int
    values: Mapping[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        if type(self.seqno) is not int or self.seqno < 0:
            raise ValueError(f"seqno must be a non-negative integer, got {self.seqno!r}")
        if not isinstance(self.values, Mapping) or not self.values:
            raise ValueError("values must be a non-empty mapping")
        for name, value in self.values.items():
            if not isinstance(name, str) or not name:
                raise ValueError(f"value names must be non-empty strings, got {name!r}")
            kind_of(value)  # raises KindMismatch on unsupported types


def encode_record(record: TimestampedRecord) -> bytes:
    """Serialize a record to its canonical JSON byte form."""
    for name, value in record.values.items():
        if type(value) is float and not math.isfinite(value):
            raise EncodeError(f"value {name!r} is not finite: {value!r}")
    doc = {
        "timestamp": format_timestamp(record.data_ts),
        "seqno": record.seqno,
        "values": {k: record.values[k] for k in sorted(record.values)},
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def decode_record(payload: bytes | bytearray | str) -> TimestampedRecord:
    """Parse a JSON payload back into a TimestampedRecord.

    Inverse of encode_record on canonical payloads. Unknown top-level keys are
    ignored; a missing seqno defaults to 0. Raises DecodeError describing the
    missing or mistyped field, with a byte offset for malformed JSON.
    """
    if isinstance(payload, (bytes, bytearray)):
        try:
            text = bytes(payload).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"payload is not UTF-8: {exc.reason}", offset=exc.start) from exc
    else:
        text = payload
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        byte_offset = len(text[: exc.pos].encode("utf-8"))
        raise DecodeError(f"malformed JSON at byte {byte_offset}: {exc.msg}",
                          offset=byte_offset) from exc

    if not isinstance(doc, dict):
        raise DecodeError(f"payload is not an object, got {type(doc).__name__}")

    if "timestamp" not in doc:
        raise DecodeError("missing field timestamp")
    raw_ts = doc["timestamp"]
    if not isinstance(raw_ts, str):
        raise DecodeError(f"field timestamp must be a string, got {type(raw_ts).__name__}")
    try:
        data_ts = parse_timestamp(raw_ts)
    except Exception as exc:
        raise DecodeError(f"field timestamp invalid: {exc}") from exc

    seqno = doc.get("seqno", 0)
    if type(seqno) is not int or seqno < 0:
        raise DecodeError(f"field seqno must be a non-negative integer, got {seqno!r}")

    if "values" not in doc:
        raise DecodeError("missing field values")
    raw_values = doc["values"]
    if not isinstance(raw_values, dict):
        raise DecodeError(f"field values must be an object, got {type(raw_values).__name__}")
    if not raw_values:
        raise DecodeError("field values must not be empty")
    for name, value in raw_values.items():
        if not isinstance(value, (bool, int, float, str)) or value is None:
            raise DecodeError(
                f"value {name!r} has unsupported type {type(value).__name__}"
            )

    return TimestampedRecord(data_ts=data_ts, seqno=seqno, values=raw_values)
