"""Trace persistence and figures.

Traces are written as one delimited row per completed step with a fixed
column set; the writer is deterministic, so equal traces produce equal
bytes. Figures are rendered headless to image files next to the delimited
output: per-step wall time, queue length at step exit, and the output
record's sequence number.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .orchestrator import RunTrace

TRACE_COLUMNS = (
    "step",
    "sim_time_ns",
    "wall_us",
    "consumed",
    "queue_exit",
    "out_seqno",
    "out_ts_ns",
    "held",
    "published",
    "dropped",
)

_BOOLS = {"true": True, "false": False}


def write_trace_csv(trace: RunTrace, path: str | Path) -> Path:
    """Write one row per completed step; returns the path written."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for step in trace.steps:
            writer.writerow(
                (
                    step.step_index,
                    step.sim_time_end_ns,
                    step.wall_duration_ns // 1000,
                    step.consumed,
                    step.queue_len_exit,
                    step.out_seqno,
                    step.out_ts_ns,
                    "true" if step.held else "false",
                    step.published,
                    step.dropped_so_far,
                )
            )
    return path


def read_trace_rows(path: str | Path) -> list[dict[str, Any]]:
    """Read a trace written by write_trace_csv back into typed rows."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise ValueError(f"{path}: not a trace file (empty)") from None
        if header != TRACE_COLUMNS:
            raise ValueError(
                f"{path}: not a trace file (header {header!r})"
            )
        rows = []
        for line_number, row in enumerate(reader, start=2):
            if len(row) != len(TRACE_COLUMNS):
                raise ValueError(f"{path} line {line_number}: ragged row")
            try:
                record = {
                    name: (_BOOLS[cell] if name == "held" else int(cell, 10))
                    for name, cell in zip(TRACE_COLUMNS, row)
                }
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path} line {line_number}: {exc}") from exc
            rows.append(record)
        return rows


def write_rows_csv(
    path: str | Path, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]
) -> Path:
    """Generic delimited writer used for experiment summaries."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(
            handle, fieldnames=list(fieldnames), lineterminator="\n"
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({name: _cell(row.get(name)) for name in fieldnames})
    return path


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return value


def render_figures(
    rows: Sequence[Mapping[str, Any]], out_dir: str | Path, stem: str
) -> list[Path]:
    """Render the standard per-step figures; returns the files written."""
    # Deferred so that trace reading and writing never pay the matplotlib
    # import, and so the headless backend is pinned before pyplot loads.
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = [row["step"] for row in rows]
    written = []

    def save(name: str, draw) -> None:
        figure, axes = plt.subplots(figsize=(8, 4.5))
        try:
            draw(axes)
            axes.set_xlabel("step")
            axes.grid(True, alpha=0.3)
            target = out_dir / f"{stem}_{name}.png"
            figure.savefig(target, dpi=110, bbox_inches="tight")
            written.append(target)
        finally:
            plt.close(figure)

    def draw_wall(axes):
        axes.plot(steps, [row["wall_us"] for row in rows], linewidth=1.0)
        axes.set_ylabel("step wall time (us)")
        axes.set_title(f"{stem}: wall time per step")

    def draw_queue(axes):
        axes.plot(steps, [row["queue_exit"] for row in rows], linewidth=1.0)
        axes.set_ylabel("queue length at step exit")
        axes.set_title(f"{stem}: queued records")

    def draw_output(axes):
        axes.plot(steps, [row["out_seqno"] for row in rows], linewidth=1.0)
        held_x = [row["step"] for row in rows if row["held"]]
        held_y = [row["out_seqno"] for row in rows if row["held"]]
        if held_x:
            axes.scatter(held_x, held_y, s=12, label="held")
            axes.legend()
        axes.set_ylabel("output record seqno")
        axes.set_title(f"{stem}: presented output")

    save("wall", draw_wall)
    save("queue", draw_queue)
    save("output", draw_output)
    return written
