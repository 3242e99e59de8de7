"""Common transport vocabulary: envelopes, handle protocols, limits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from ..errors import TransportError

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 5673

#: Hard cap on a single frame/payload, in bytes.
MAX_FRAME_BYTES = 1 << 20

#: Maximum envelopes buffered per subscription (and per retained key) before
#: the oldest are discarded.
RETENTION_CAP = 100_000


def validate_routing_key(key: str) -> str:
    """Routing keys are matched as exact strings; reject anything unprintable."""
    if not isinstance(key, str) or not key:
        raise TransportError("routing key must be a non-empty string")
    for ch in key:
        if ord(ch) < 0x20 or ord(ch) == 0x7F:
            raise TransportError(f"routing key contains control character: {key!r}")
    return key


@dataclass(frozen=True)
class Envelope:
    """One routed message: an exact-match key and an opaque payload."""

    routing_key: str
    payload: bytes

    def __post_init__(self):
        validate_routing_key(self.routing_key)
        if not isinstance(self.payload, (bytes, bytearray)):
            raise TransportError("payload must be bytes")


@runtime_checkable
class Subscription(Protocol):
    """A stream of envelopes for one routing key.

    poll returns immediately with whatever is pending (up to max_count) and
    otherwise blocks until at least one envelope arrives or timeout_ns of
    real time elapses, returning [] in that case.
    """

    def poll(self, max_count: int = 1, timeout_ns: int = 0) -> list[Envelope]: ...

    def close(self) -> None: ...


@runtime_checkable
class BrokerHandle(Protocol):
    """Publish/subscribe endpoint; implementations must be thread-safe."""

    def publish(self, envelope: Envelope) -> None: ...

    def subscribe(self, routing_key: str) -> Subscription: ...

    def close(self) -> None: ...
