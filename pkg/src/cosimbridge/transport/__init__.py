"""Message transport: envelopes, the record codec, and two broker backends."""

from .base import (
    DEFAULT_HOST,
    DEFAULT_PORT,
    MAX_FRAME_BYTES,
    RETENTION_CAP,
    BrokerHandle,
    Envelope,
    Subscription,
    validate_routing_key,
)
from .codec import TimestampedRecord, decode_record, encode_record
from .memory import InMemoryBroker, SubscriptionQueue
from .tcp import TcpBrokerClient, TcpBrokerServer

__all__ = [
    "DEFAULT_HOST",
    "DEFAULT_PORT",
    "MAX_FRAME_BYTES",
    "RETENTION_CAP",
    "BrokerHandle",
    "Envelope",
    "Subscription",
    "validate_routing_key",
    "TimestampedRecord",
    "decode_record",
    "encode_record",
    "InMemoryBroker",
    "SubscriptionQueue",
    "TcpBrokerClient",
    "TcpBrokerServer",
]
