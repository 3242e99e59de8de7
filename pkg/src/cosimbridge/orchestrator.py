"""Run scenarios: wire broker, bridge, replay, and monitor, then step.

The orchestrator owns the step loop. Each iteration first spends the
injected delay (standing in for the other units' computation), then steps
the bridge, then steps the monitor on the bridge outputs of the previous
step (outputs cross between units one step after they are produced). The
first time the monitor's distance lands below its threshold, the stop
decision is published during that same step and the run halts, so bridge
outputs from step k trigger a stop publication during step k + 1.

A StepTimeout does not raise out of run(): the trace is truncated and
records which step gave up. Any other failure raises RunAborted carrying
the partial trace.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from enum import Enum
from math import ceil
from typing import Mapping

from .bridge import Bridge, BridgeConfig, StepReport
from .clocks import VirtualClock, WallClock
from .errors import CosimError, RunAborted, ScenarioError, StepTimeout
from .monitor import MonitorConfig, MonitorReport, MonitorUnit
from .replay import ReplaySchedule, WallclockReplayer
from .timebase import Value
from .transport import BrokerHandle, Envelope, InMemoryBroker, TimestampedRecord, encode_record

log = logging.getLogger(__name__)


class ExecutionMode(Enum):
    VIRTUAL = "virtual"
    WALLCLOCK = "wallclock"


@dataclass(frozen=True)
class Scenario:
    """Everything a run needs; durations in nanoseconds."""

    name: str
    bridge: BridgeConfig
    n_steps: int
    step_size_ns: int
    injected_delay_ns: int = 0
    mode: ExecutionMode = ExecutionMode.VIRTUAL
    schedule: ReplaySchedule | None = None
    monitor: MonitorConfig | None = None
    initial_inputs: Mapping[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise ScenarioError("scenario name must not be empty")
        if self.n_steps < 1:
            raise ScenarioError("a scenario needs at least one step")
        if self.step_size_ns <= 0:
            raise ScenarioError("step size must be positive")
        if self.injected_delay_ns < 0:
            raise ScenarioError("injected delay must not be negative")
        if self.mode is ExecutionMode.VIRTUAL and self.schedule is None:
            raise ScenarioError(
                "virtual mode has no external data source, so it requires a "
                "replay schedule (an empty one is allowed)"
            )


@dataclass(frozen=True)
class RunSummary:
    """Aggregates over one trace; wall times in whole microseconds."""

    steps_completed: int
    held_steps: int
    total_consumed: int
    mean_wall_us: float
    max_wall_us: int
    p99_wall_us: int
    final_queue_len: int
    last_out_seqno: int | None
    dropped: int
    timed_out_step: int | None
    stop_step: int | None


@dataclass
class RunTrace:
    """Per-step reports plus run-level outcomes."""

    scenario_name: str
    mode: ExecutionMode
    steps: list[StepReport] = field(default_factory=list)
    timed_out_step: int | None = None
    stop_step: int | None = None
    monitor_reports: list[MonitorReport] = field(default_factory=list)

    def summary(self) -> RunSummary:
        wall_us = sorted(step.wall_duration_ns // 1000 for step in self.steps)
        if wall_us:
            p99 = wall_us[ceil(0.99 * len(wall_us)) - 1]  # nearest-rank
            mean = statistics.fmean(wall_us)
            top = wall_us[-1]
        else:
            p99, mean, top = 0, 0.0, 0
        last = self.steps[-1] if self.steps else None
        return RunSummary(
            steps_completed=len(self.steps),
            held_steps=sum(1 for step in self.steps if step.held),
            total_consumed=sum(step.consumed for step in self.steps),
            mean_wall_us=mean,
            max_wall_us=top,
            p99_wall_us=p99,
            final_queue_len=last.queue_len_exit if last else 0,
            last_out_seqno=last.out_seqno if last else None,
            dropped=last.dropped_so_far if last else 0,
            timed_out_step=self.timed_out_step,
            stop_step=self.stop_step,
        )


def run(scenario: Scenario, broker: BrokerHandle | None = None) -> RunTrace:
    """Execute a scenario start to finish and return its trace.

    With broker=None an in-memory broker is created and closed here;
    passing one in (say, a TCP client) leaves its lifetime to the caller.
    """
    own_broker = broker is None
    if broker is None:
        broker = InMemoryBroker()
    virtual = scenario.mode is ExecutionMode.VIRTUAL
    clock = VirtualClock() if virtual else WallClock()
    bridge = Bridge(scenario.bridge, broker, clock)
    replayer: WallclockReplayer | None = None
    monitor = MonitorUnit(scenario.monitor) if scenario.monitor is not None else None
    trace = RunTrace(scenario_name=scenario.name, mode=scenario.mode)
    key_in = scenario.bridge.routing_key_in
    out_epoch = scenario.bridge.scenario_epoch_ns or 0

    try:
        bridge.setup()
        if scenario.schedule is not None:
            if virtual:
                scenario.schedule.register_virtual(clock, broker, key_in)
            else:
                replayer = WallclockReplayer(broker, key_in, scenario.schedule).start()
        for name, value in scenario.initial_inputs.items():
            bridge.set_input(name, value)

        previous_outputs: dict[str, Value] | None = None
        for i in range(1, scenario.n_steps + 1):
            clock.busy_wait(scenario.injected_delay_ns)
            step_start = (i - 1) * scenario.step_size_ns
            try:
                report = bridge.do_step(step_start, scenario.step_size_ns)
            except StepTimeout as exc:
                log.warning("run %s: step %d timed out: %s", scenario.name, i, exc)
                trace.timed_out_step = i
                break
            except CosimError as exc:
                raise RunAborted(
                    f"run {scenario.name!r} failed at step {i}: {exc}", trace=trace
                ) from exc
            trace.steps.append(report)

            if monitor is not None:
                decision = monitor.do_step(previous_outputs)
                trace.monitor_reports.append(decision)
                if decision.stop and trace.stop_step is None:
                    stop_record = TimestampedRecord(
                        data_ts=out_epoch + i * scenario.step_size_ns,
                        seqno=1,
                        values={"stop": True},
                    )
                    broker.publish(
                        Envelope(
                            monitor.config.stop_routing_key, encode_record(stop_record)
                        )
                    )
                    trace.stop_step = i
                    break
            previous_outputs = bridge.get_outputs()

        if replayer is not None and replayer.error is not None:
            raise RunAborted(
                f"run {scenario.name!r}: replay failed: {replayer.error}", trace=trace
            ) from replayer.error
    finally:
        bridge.terminate()
        if replayer is not None:
            replayer.stop()
        if own_broker:
            broker.close()
    return trace
