"""Distance monitor: watches position outputs and decides when to stop.

The monitor is a small co-simulated unit. Each step it reads the position
coordinates produced by the bridge on the previous step, computes the
Euclidean distance to a fixed reference point, and reports stop=True once
that distance falls strictly below the threshold. Until positions exist it
reports defaults (no distance, no stop), so it can start alongside the
bridge without special cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .errors import UnknownVariable
from .timebase import Value, ValueKind, check_kind


@dataclass(frozen=True)
class MonitorConfig:
    """Threshold rule over named real-valued coordinates."""

    threshold: float
    coordinates: tuple[str, ...]
    reference: tuple[float, ...]
    stop_routing_key: str = "cosim.stop"

    def __post_init__(self):
        if not isinstance(self.threshold, float) or not math.isfinite(self.threshold):
            raise ValueError("threshold must be a finite real")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if not self.coordinates:
            raise ValueError("at least one coordinate is required")
        for name in self.coordinates:
            if not isinstance(name, str) or not name:
                raise ValueError(f"coordinate names must be non-empty text: {name!r}")
        if len(set(self.coordinates)) != len(self.coordinates):
            raise ValueError("coordinate names must be unique")
        if len(self.reference) != len(self.coordinates):
            raise ValueError(
                f"reference has {len(self.reference)} components for "
                f"{len(self.coordinates)} coordinates"
            )
        for component in self.reference:
            if not isinstance(component, float) or not math.isfinite(component):
                raise ValueError("reference components must be finite reals")


def monitor_step(
    observed: Mapping[str, Value],
    coordinates: tuple[str, ...],
    reference: tuple[float, ...],
    threshold: float,
) -> tuple[float, bool]:
    """Distance from observed coordinates to the reference, and the decision.

    Raises UnknownVariable for a missing coordinate and ValueError for a
    non-finite one; coordinates must be reals.
    """
    total = 0.0
    for name, want in zip(coordinates, reference):
        if name not in observed:
            raise UnknownVariable(f"monitored coordinate {name!r} is missing")
        value = observed[name]
        check_kind(name, value, ValueKind.REAL)
        assert isinstance(value, float)
        if not math.isfinite(value):
            raise ValueError(f"monitored coordinate {name!r} is not finite: {value!r}")
        total += (value - want) ** 2
    distance = math.sqrt(total)
    return distance, distance < threshold


@dataclass(frozen=True)
class MonitorReport:
    """One monitor step: None distance means no positions were seen yet."""

    distance: float | None
    stop: bool


class MonitorUnit:
    """Stateful wrapper stepping the monitor rule over a run."""

    def __init__(self, config: MonitorConfig):
        self._config = config
        self._last = MonitorReport(distance=None, stop=False)

    @property
    def config(self) -> MonitorConfig:
        return self._config

    @property
    def last_report(self) -> MonitorReport:
        return self._last

    def do_step(self, observed: Mapping[str, Value] | None) -> MonitorReport:
        if observed is None:
            self._last = MonitorReport(distance=None, stop=False)
            return self._last
        distance, stop = monitor_step(
            observed,
            self._config.coordinates,
            self._config.reference,
            self._config.threshold,
        )
        self._last = MonitorReport(distance=distance, stop=stop)
        return self._last
