"""Command line front end.

Subcommands: ``serve`` (TCP broker), ``replay`` (feed a broker from a
schedule on the wall clock), ``run`` (execute one scenario and write its
trace), ``experiment`` (run a parameter grid), ``oracle`` (print the
reference model's expected outputs for a scenario), and ``report``
(render figures from a trace file).

Exit codes: 0 success; 1 usage errors and unreadable or invalid input
files; 2 environment failures (ports, broker connections, output
locations); 3 run truncated by a step timeout. The ``COSIM_BRIDGE_LOG``
environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from .errors import RunAborted, ScenarioError, TransportError
from .oracle import oracle_outputs
from .orchestrator import ExecutionMode, RunTrace, run
from .replay import WallclockReplayer
from .scenariofile import load_experiment, load_scenario
from .transport import DEFAULT_HOST, DEFAULT_PORT, TcpBrokerClient, TcpBrokerServer

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ENVIRONMENT = 2
EXIT_TIMEOUT = 3

log = logging.getLogger(__name__)


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for bad usage; 2 is reserved
        # for environment failures here, so remap usage errors to 1.
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.command(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_OK


def _configure_logging() -> None:
    level = logging.WARNING
    name = os.environ.get("COSIM_BRIDGE_LOG", "").strip()
    if name:
        candidate = logging.getLevelName(name.upper())
        if isinstance(candidate, int):
            level = candidate
        else:
            print(f"warning: unknown log level {name!r}", file=sys.stderr)
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cosimbridge",
        description="Bridge timestamped data streams into stepped co-simulation runs.",
    )
    commands = parser.add_subparsers(dest="subcommand", required=True)

    serve = commands.add_parser("serve", help="run the TCP broker until interrupted")
    serve.add_argument("--host", default=DEFAULT_HOST)
    serve.add_argument("--port", type=int, default=DEFAULT_PORT)
    serve.set_defaults(command=cmd_serve)

    replay = commands.add_parser(
        "replay", help="publish a scenario's replay schedule to a broker"
    )
    replay.add_argument("scenario", help="scenario file with a replay section")
    replay.add_argument(
        "--broker", default=f"{DEFAULT_HOST}:{DEFAULT_PORT}", metavar="HOST:PORT"
    )
    replay.add_argument("--seed", type=int, default=None)
    replay.set_defaults(command=cmd_replay)

    run_cmd = commands.add_parser("run", help="execute one scenario")
    run_cmd.add_argument("scenario")
    run_cmd.add_argument("--out", default=None, help="trace file to write")
    run_cmd.add_argument(
        "--figures",
        action="store_true",
        help="render figures next to the trace (requires --out)",
    )
    run_cmd.add_argument(
        "--mode", choices=("virtual", "wallclock"), default=None,
        help="override the scenario's execution mode",
    )
    run_cmd.add_argument(
        "--broker", default=None, metavar="HOST:PORT",
        help="use an external broker (wallclock mode only)",
    )
    run_cmd.add_argument("--seed", type=int, default=None)
    run_cmd.set_defaults(command=cmd_run)

    experiment = commands.add_parser(
        "experiment", help="run every cell of a parameter grid"
    )
    experiment.add_argument("grid", help="scenario file with a sweep section")
    experiment.add_argument(
        "--out", required=True, metavar="DIR",
        help="directory for per-run traces and summary.csv",
    )
    experiment.add_argument("--seed", type=int, default=None)
    experiment.set_defaults(command=cmd_experiment)

    oracle = commands.add_parser(
        "oracle", help="print the reference model's expected per-step outputs"
    )
    oracle.add_argument("scenario")
    oracle.add_argument("--out", default=None, help="write rows here instead of stdout")
    oracle.add_argument("--seed", type=int, default=None)
    oracle.set_defaults(command=cmd_oracle)

    report = commands.add_parser("report", help="render figures from a trace file")
    report.add_argument("trace")
    report.add_argument(
        "--out", default=None, metavar="DIR",
        help="directory for figures (default: next to the trace)",
    )
    report.set_defaults(command=cmd_report)

    return parser


def _parse_broker(value: str) -> tuple[str, int]:
    host, separator, port_text = value.rpartition(":")
    if not separator or not host:
        raise ScenarioError(f"broker address {value!r} is not HOST:PORT")
    try:
        port = int(port_text, 10)
    except ValueError:
        raise ScenarioError(f"broker address {value!r} has a non-numeric port") from None
    if not 0 <= port <= 65535:
        raise ScenarioError(f"broker port {port} is out of range")
    return host, port


def _print_warnings(warnings: Sequence[str]) -> None:
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        server = TcpBrokerServer(args.host, args.port)
    except OSError as exc:
        print(f"error: cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    server.start()
    print(f"listening on {server.host}:{server.port}", flush=True)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        return EXIT_OK
    finally:
        server.close()


def cmd_replay(args: argparse.Namespace) -> int:
    scenario, warnings = load_scenario(args.scenario, seed_override=args.seed)
    _print_warnings(warnings)
    if scenario.mode is ExecutionMode.VIRTUAL:
        print(
            "error: virtual scenarios replay in-process during `run`; "
            "`replay` feeds wallclock brokers only",
            file=sys.stderr,
        )
        return EXIT_USAGE
    if scenario.schedule is None:
        print("error: scenario has no replay section", file=sys.stderr)
        return EXIT_USAGE
    host, port = _parse_broker(args.broker)
    try:
        client = TcpBrokerClient(host, port)
    except (OSError, TransportError) as exc:
        print(f"error: cannot reach broker at {host}:{port}: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    replayer = WallclockReplayer(
        client, scenario.bridge.routing_key_in, scenario.schedule
    )
    try:
        replayer.start()
        while not replayer.done:
            time.sleep(0.05)
    except KeyboardInterrupt:
        replayer.stop()
        print(f"interrupted after {replayer.published} records", file=sys.stderr)
        return EXIT_OK
    finally:
        client.close()
    if replayer.error is not None:
        print(f"error: replay failed: {replayer.error}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    print(f"published {replayer.published} records")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    if args.figures and args.out is None:
        print("error: --figures requires --out", file=sys.stderr)
        return EXIT_USAGE
    scenario, warnings = load_scenario(args.scenario, seed_override=args.seed)
    _print_warnings(warnings)
    if args.mode is not None:
        scenario = dataclasses.replace(
            scenario, mode=ExecutionMode[args.mode.upper()]
        )
    client = None
    if args.broker is not None:
        if scenario.mode is ExecutionMode.VIRTUAL:
            # Virtual runs need same-instant delivery, which only the
            # in-process broker provides; a socket hop would reorder it.
            print(
                "error: --broker applies to wallclock scenarios only",
                file=sys.stderr,
            )
            return EXIT_USAGE
        host, port = _parse_broker(args.broker)
        try:
            client = TcpBrokerClient(host, port)
        except (OSError, TransportError) as exc:
            print(
                f"error: cannot reach broker at {host}:{port}: {exc}", file=sys.stderr
            )
            return EXIT_ENVIRONMENT
    try:
        try:
            trace = run(scenario, broker=client)
        except RunAborted as exc:
            print(f"error: run aborted: {exc}", file=sys.stderr)
            return EXIT_ENVIRONMENT
    finally:
        if client is not None:
            client.close()
    if args.out is not None:
        from .report import render_figures, read_trace_rows, write_trace_csv

        out_path = write_trace_csv(trace, args.out)
        print(f"trace written to {out_path}")
        if args.figures:
            rows = read_trace_rows(out_path)
            for figure in render_figures(rows, out_path.parent, out_path.stem):
                print(f"figure written to {figure}")
    _print_summary(trace)
    return EXIT_TIMEOUT if trace.timed_out_step is not None else EXIT_OK


def _print_summary(trace: RunTrace) -> None:
    summary = trace.summary()
    print(
        f"{trace.scenario_name}: {summary.steps_completed} steps, "
        f"{summary.held_steps} held, {summary.total_consumed} consumed"
    )
    print(
        f"wall per step: mean {summary.mean_wall_us:.1f} us, "
        f"max {summary.max_wall_us} us, p99 {summary.p99_wall_us} us"
    )
    print(
        f"queue at exit: {summary.final_queue_len} records "
        f"({summary.dropped} dropped)"
    )
    if summary.last_out_seqno is not None:
        last = trace.steps[-1]
        print(f"last output: seqno {summary.last_out_seqno}, ts {last.out_ts_ns} ns")
    if summary.timed_out_step is not None:
        print(f"step {summary.timed_out_step} timed out waiting for data")
    if summary.stop_step is not None:
        print(f"stop requested during step {summary.stop_step}")


def cmd_experiment(args: argparse.Namespace) -> int:
    from .report import write_rows_csv, write_trace_csv

    plan = load_experiment(args.grid, seed_override=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    param_keys = list(plan.runs[0].params) if plan.runs else []
    rows = []
    timed_out = 0
    for cell in plan.runs:
        _print_warnings(f"{cell.name}: {text}" for text in cell.warnings)
        try:
            trace = run(cell.scenario)
        except RunAborted as exc:
            print(f"error: {cell.name} aborted: {exc}", file=sys.stderr)
            return EXIT_ENVIRONMENT
        write_trace_csv(trace, out_dir / f"{cell.name}.csv")
        summary = trace.summary()
        row = {"run": cell.name, **cell.params}
        row.update(
            steps=summary.steps_completed,
            held=summary.held_steps,
            consumed=summary.total_consumed,
            mean_wall_us=round(summary.mean_wall_us, 3),
            max_wall_us=summary.max_wall_us,
            p99_wall_us=summary.p99_wall_us,
            final_queue=summary.final_queue_len,
            last_out_seqno=summary.last_out_seqno,
            dropped=summary.dropped,
            timed_out_step=summary.timed_out_step,
            stop_step=summary.stop_step,
        )
        rows.append(row)
        if summary.timed_out_step is not None:
            timed_out += 1
        status = (
            f"timed out at step {summary.timed_out_step}"
            if summary.timed_out_step is not None
            else f"{summary.steps_completed} steps"
        )
        print(f"{cell.name}: {status}, last seqno {summary.last_out_seqno}")
    fieldnames = [
        "run",
        *param_keys,
        "steps",
        "held",
        "consumed",
        "mean_wall_us",
        "max_wall_us",
        "p99_wall_us",
        "final_queue",
        "last_out_seqno",
        "dropped",
        "timed_out_step",
        "stop_step",
    ]
    summary_path = write_rows_csv(out_dir / "summary.csv", fieldnames, rows)
    print(f"summary written to {summary_path}")
    if timed_out:
        print(f"{timed_out} of {len(rows)} runs timed out", file=sys.stderr)
    return EXIT_OK


ORACLE_COLUMNS = ("step", "out_seqno", "out_ts_ns", "held")


def cmd_oracle(args: argparse.Namespace) -> int:
    scenario, warnings = load_scenario(args.scenario, seed_override=args.seed)
    _print_warnings(warnings)
    if scenario.schedule is None:
        print("error: scenario has no replay section to predict from", file=sys.stderr)
        return EXIT_USAGE
    config = scenario.bridge
    prediction = oracle_outputs(
        scenario.schedule.to_publications(),
        n_steps=scenario.n_steps,
        step_size_ns=scenario.step_size_ns,
        policy=config.policy.value,
        maxage_ns=config.maxage_ns,
        lookahead=config.lookahead,
        injected_delay_ns=scenario.injected_delay_ns,
        timeout_ns=config.timeout_ns,
        epoch_ns=config.scenario_epoch_ns,
    )
    handle = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(ORACLE_COLUMNS)
        for step in prediction.steps:
            writer.writerow(
                (
                    step.step,
                    step.out_seqno,
                    step.out_ts_ns,
                    "true" if step.held else "false",
                )
            )
    finally:
        if args.out:
            handle.close()
    if prediction.timed_out_step is not None:
        print(
            f"predicted timeout at step {prediction.timed_out_step}", file=sys.stderr
        )
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    from .report import read_trace_rows, render_figures

    trace_path = Path(args.trace)
    try:
        rows = read_trace_rows(trace_path)
    except (OSError, ValueError) as exc:
        # A trace that cannot be read or parsed is bad input, not a
        # broken environment, so it lands in the usage exit class.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out) if args.out else trace_path.parent
    for figure in render_figures(rows, out_dir, trace_path.stem):
        print(f"figure written to {figure}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
