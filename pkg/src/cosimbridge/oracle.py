"""Independent reference model for output selection and whole runs.

This module restates the selection rules and the virtual-time run semantics
in the most literal form possible: plain scans over plain numbers, no
queues, no threads, no clock objects, and no imports from the bridge
machinery. Tests compare bridge behaviour against these functions, so any
shared cleverness would defeat the point; keep this file boring.

The run model deliberately ignores queue capacity: it assumes no record is
dropped for space. Scenarios sized anywhere near the queue capacity are
outside its scope.

Policies are named by strings here ("v1" for the conservative rule, "v2"
for move-to-latest) so that nothing from the bridge module is imported.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


def oracle_select(
    record_times: Sequence[int],
    current_time: int | None,
    horizon_ns: int,
    policy: str,
    maxage_ns: int,
    lookahead: int,
) -> tuple[str, int | None]:
    """Decide one selection: returns ("hold" | "advance" | "need_data", count).

    record_times are the simulation timestamps of the queued records in
    arrival order; current_time is the timestamp of the record currently
    presented as output, or None before any record was selected. On
    "advance" the second element is how many records are consumed; the
    consumed records are the first that many in the sequence, and the last
    of them becomes the new output.
    """
    if policy not in ("v1", "v2"):
        raise ValueError(f"unknown policy {policy!r}")
    if lookahead < 1:
        raise ValueError("lookahead must be at least 1")

    eligible = 0
    for t in record_times:
        if t <= horizon_ns:
            eligible += 1
        else:
            break

    current_is_fresh = current_time is not None and current_time + maxage_ns >= horizon_ns

    if policy == "v1":
        if current_is_fresh:
            return ("hold", None)
        if eligible > 0:
            return ("advance", min(eligible, lookahead))
        return ("need_data", None)

    if eligible > 0:
        return ("advance", min(eligible, lookahead))
    if current_is_fresh:
        return ("hold", None)
    return ("need_data", None)


@dataclass(frozen=True)
class OracleStep:
    """Expected outcome of one completed step."""

    step: int
    sim_time_end_ns: int
    out_seqno: int
    out_ts_ns: int
    held: bool
    consumed: int


@dataclass(frozen=True)
class OracleRun:
    """Expected outcomes for a run; timed_out_step names the step, if any,
    on which the bridge should give up waiting for data."""

    steps: tuple[OracleStep, ...]
    timed_out_step: int | None


def oracle_outputs(
    publications: Sequence[tuple[int, int, int]],
    n_steps: int,
    step_size_ns: int,
    policy: str,
    maxage_ns: int,
    lookahead: int,
    injected_delay_ns: int,
    timeout_ns: int,
    epoch_ns: int | None = None,
) -> OracleRun:
    """Predict every step of a virtual-mode run by plain arithmetic.

    publications is the replay schedule: (publish_instant_ns, data_ts_ns,
    seqno) triples ordered by publish instant, with data timestamps
    nondecreasing. Each step first advances logical time by the injected
    delay, delivering every publication whose instant has been reached, then
    applies the selection rule at the step's end horizon. When selection
    needs data, logical time walks forward through publication instants
    until a record eligible for the horizon arrives or the timeout budget is
    spent; spending the budget truncates the run.
    """
    if step_size_ns <= 0:
        raise ValueError("step size must be positive")
    if timeout_ns <= 0:
        raise ValueError("timeout must be positive")
    if injected_delay_ns < 0:
        raise ValueError("injected delay must not be negative")
    if maxage_ns < 0:
        raise ValueError("maxage must not be negative")
    for i in range(1, len(publications)):
        if publications[i][0] < publications[i - 1][0]:
            raise ValueError("publication instants must be nondecreasing")
        if publications[i][1] < publications[i - 1][1]:
            raise ValueError("record timestamps must be nondecreasing")

    if epoch_ns is None:
        epoch_ns = publications[0][1] if publications else 0
    for _, data_ts, _ in publications:
        if data_ts < epoch_ns:
            raise ValueError("record timestamp precedes the epoch")

    times = [data_ts - epoch_ns for _, data_ts, _ in publications]
    seqnos = [seqno for _, _, seqno in publications]
    instants = [instant for instant, _, _ in publications]

    now = 0
    delivered = 0  # records[0:delivered] have been published and received
    consumed = 0  # records[0:consumed] have been taken off the queue
    current_seqno: int | None = None
    current_time: int | None = None
    steps: list[OracleStep] = []

    for step in range(1, n_steps + 1):
        horizon = step * step_size_ns
        now += injected_delay_ns
        while delivered < len(instants) and instants[delivered] <= now:
            delivered += 1

        queued = times[consumed:delivered]
        kind, count = oracle_select(
            queued, current_time, horizon, policy, maxage_ns, lookahead
        )

        if kind == "need_data":
            deadline = now + timeout_ns
            resolved = False
            while delivered < len(instants) and instants[delivered] <= deadline:
                instant = instants[delivered]
                now = instant
                while delivered < len(instants) and instants[delivered] == instant:
                    delivered += 1
                queued = times[consumed:delivered]
                kind, count = oracle_select(
                    queued, current_time, horizon, policy, maxage_ns, lookahead
                )
                if kind != "need_data":
                    resolved = True
                    break
            if not resolved:
                return OracleRun(steps=tuple(steps), timed_out_step=step)

        if kind == "advance":
            assert count is not None
            consumed += count
            current_seqno = seqnos[consumed - 1]
            current_time = times[consumed - 1]
            held = False
            taken = count
        else:
            held = True
            taken = 0

        assert current_seqno is not None and current_time is not None
        steps.append(
            OracleStep(
                step=step,
                sim_time_end_ns=horizon,
                out_seqno=current_seqno,
                out_ts_ns=current_time,
                held=held,
                consumed=taken,
            )
        )

    return OracleRun(steps=tuple(steps), timed_out_step=None)
