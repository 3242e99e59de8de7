"""Exception hierarchy shared across the package.

Everything raised on purpose derives from CosimError so callers can catch
broker/bridge failures without swallowing programming errors. A few classes
double as ValueError because they signal malformed user input.
"""

from __future__ import annotations


class CosimError(Exception):
    """Base class for all errors raised by this package."""


class TimestampError(CosimError, ValueError):
    """A timestamp string or value could not be parsed or mapped."""


class DurationError(CosimError, ValueError):
    """A duration string could not be parsed exactly."""


class EncodeError(CosimError, ValueError):
    """A record could not be serialized to the wire format."""


class DecodeError(CosimError, ValueError):
    """A payload could not be parsed back into a record.

    ``offset`` is the byte offset into the payload where parsing failed,
    when that position is known (malformed JSON); otherwise None.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class TransportError(CosimError):
    """Broker-level failure (connection, protocol, frame limits)."""


class TransportClosed(TransportError):
    """Operation attempted on a closed broker handle or subscription."""


class FrameTooLarge(TransportError):
    """Payload exceeds the broker's maximum frame size."""


class IngressError(CosimError):
    """Consumer-side failure while moving envelopes into the incoming queue."""


class LifecycleError(CosimError):
    """Bridge operation called in the wrong lifecycle state."""


class UnknownVariable(CosimError, KeyError):
    """Variable name not present in the declared interface."""


class KindMismatch(CosimError, TypeError):
    """Value does not match the declared kind of the variable."""


class NotYetStepped(CosimError):
    """Output read before the first successful step produced one."""


class StepTimeout(CosimError):
    """No step-eligible data arrived within the configured timeout.

    Carries the step horizon (end of the failed step, nanoseconds of
    simulation time) and a snapshot of queue statistics for diagnosis.
    """

    def __init__(self, horizon_ns: int, queue_len: int, dropped: int, rejected: int):
        super().__init__(
            f"no data with timestamp <= {horizon_ns} ns arrived before timeout "
            f"(queue length {queue_len}, dropped {dropped}, rejected {rejected})"
        )
        self.horizon_ns = horizon_ns
        self.queue_len = queue_len
        self.dropped = dropped
        self.rejected = rejected


class ScenarioError(CosimError, ValueError):
    """Scenario, grid or replay-source input is invalid."""


class RunAborted(CosimError):
    """A unit failed mid-run; carries the partial trace for inspection."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
