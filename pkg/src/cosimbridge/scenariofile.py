"""Scenario and experiment files: YAML in, Scenario objects and lints out.

A scenario file is one YAML mapping describing a run. Durations are either
bare integers (nanoseconds) or strings with a unit suffix (100ms, 2s);
timestamps are integer nanoseconds or calendar form. Unknown keys are
rejected so that typos fail loudly instead of silently meaning defaults.

An experiment file wraps a base scenario with a sweep: a mapping from
dotted parameter paths to value lists; the cross product (capped) becomes
one scenario per combination.

validate_scenario_doc returns configuration warnings, not errors: shapes
that run fine but rarely mean what the author wanted, like a lookahead far
below the per-step arrival rate.
"""

from __future__ import annotations

import copy
import datetime
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .bridge import BridgeConfig, IngestMode, Policy
from .errors import ScenarioError
from .monitor import MonitorConfig
from .orchestrator import ExecutionMode, Scenario
from .replay import ReplaySchedule, read_csv_records, schedule_records, synthetic_schedule
from .timebase import (
    DurationError,
    TimestampError,
    Direction,
    ValueKind,
    VariableDecl,
    parse_duration,
    parse_timestamp,
)

MAX_GRID_RUNS = 256

SWEEPABLE_PATHS = (
    "step_size",
    "injected_delay",
    "bridge.policy",
    "bridge.maxage",
    "bridge.lookahead",
    "bridge.ingest",
    "replay.wall_period",
    "replay.data_spacing",
)

_SCENARIO_KEYS = {
    "name", "mode", "steps", "step_size", "injected_delay",
    "bridge", "replay", "monitor", "inputs",
}
_BRIDGE_KEYS = {
    "policy", "maxage", "lookahead", "timeout", "ingest", "queue_capacity",
    "routing_key_in", "routing_key_out", "epoch", "variables",
}
_REPLAY_KEYS = {
    "source", "count", "wall_period", "data_spacing", "base_timestamp",
    "seed", "gap_every", "gap_extra", "path",
}
_MONITOR_KEYS = {"threshold", "coordinates", "reference", "stop_routing_key"}


def _require_mapping(value: Any, where: str) -> Mapping:
    if not isinstance(value, Mapping):
        raise ScenarioError(f"{where} must be a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(doc: Mapping, allowed: set[str], where: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ScenarioError(f"unknown {where} keys: {', '.join(unknown)}")


def _duration(doc: Mapping, key: str, where: str, default: int | None = None) -> int:
    if key not in doc:
        if default is None:
            raise ScenarioError(f"{where} is missing required key {key!r}")
        return default
    try:
        return parse_duration(doc[key])
    except DurationError as exc:
        raise ScenarioError(f"{where}.{key}: {exc}") from exc


def _timestamp(value: Any, where: str) -> int:
    if isinstance(value, bool):
        raise ScenarioError(f"{where}: not a timestamp: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return parse_timestamp(value)
        except TimestampError as exc:
            raise ScenarioError(f"{where}: {exc}") from exc
    # YAML parses unquoted calendar timestamps into datetime objects; naive
    # ones are taken as UTC.
    if isinstance(value, datetime.datetime):
        if value.tzinfo is None:
            value = value.replace(tzinfo=datetime.timezone.utc)
        delta = value - datetime.datetime(1970, 1, 1, tzinfo=datetime.timezone.utc)
        seconds = delta.days * 86_400 + delta.seconds
        return seconds * 1_000_000_000 + delta.microseconds * 1_000
    if isinstance(value, datetime.date):
        delta = value - datetime.date(1970, 1, 1)
        return delta.days * 86_400 * 1_000_000_000
    raise ScenarioError(f"{where}: not a timestamp: {value!r}")


def _int(doc: Mapping, key: str, where: str, default: int | None = None) -> int:
    if key not in doc:
        if default is None:
            raise ScenarioError(f"{where} is missing required key {key!r}")
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{where}.{key} must be an integer, got {value!r}")
    return value


def _enum(doc: Mapping, key: str, enum, where: str, default):
    raw = doc.get(key)
    if raw is None:
        return default
    try:
        return enum(raw)
    except ValueError:
        options = ", ".join(member.value for member in enum)
        raise ScenarioError(
            f"{where}.{key}: {raw!r} is not one of {options}"
        ) from None


def _build_variables(raw: Any, where: str) -> tuple[VariableDecl, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ScenarioError(f"{where} must be a list of variable declarations")
    decls = []
    for index, item in enumerate(raw, start=1):
        item = _require_mapping(item, f"{where}[{index}]")
        _reject_unknown(item, {"name", "kind", "direction"}, f"{where}[{index}]")
        for field in ("name", "kind", "direction"):
            if field not in item:
                raise ScenarioError(f"{where}[{index}] is missing {field!r}")
        kind = _enum(item, "kind", ValueKind, f"{where}[{index}]", None)
        direction = _enum(item, "direction", Direction, f"{where}[{index}]", None)
        try:
            decls.append(VariableDecl(item["name"], kind, direction))
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}[{index}]: {exc}") from exc
    return tuple(decls)


def _build_bridge(doc: Mapping) -> BridgeConfig:
    doc = _require_mapping(doc, "bridge")
    _reject_unknown(doc, _BRIDGE_KEYS, "bridge")
    epoch = doc.get("epoch")
    kwargs: dict[str, Any] = dict(
        maxage_ns=_duration(doc, "maxage", "bridge"),
        lookahead=_int(doc, "lookahead", "bridge", default=1),
        timeout_ns=_duration(doc, "timeout", "bridge", default=1_000_000_000),
        policy=_enum(doc, "policy", Policy, "bridge", Policy.V2_MOVE_TO_LATEST),
        ingest_mode=_enum(doc, "ingest", IngestMode, "bridge", IngestMode.THREADED),
        variables=_build_variables(doc.get("variables"), "bridge.variables"),
        scenario_epoch_ns=None if epoch is None else _timestamp(epoch, "bridge.epoch"),
    )
    if "queue_capacity" in doc:
        kwargs["queue_capacity"] = _int(doc, "queue_capacity", "bridge")
    if "routing_key_in" in doc:
        kwargs["routing_key_in"] = str(doc["routing_key_in"])
    if "routing_key_out" in doc:
        kwargs["routing_key_out"] = str(doc["routing_key_out"])
    try:
        return BridgeConfig(**kwargs)
    except ValueError as exc:
        raise ScenarioError(f"bridge: {exc}") from exc


def _build_schedule(
    doc: Mapping, base_dir: Path, seed_override: int | None
) -> ReplaySchedule:
    doc = _require_mapping(doc, "replay")
    _reject_unknown(doc, _REPLAY_KEYS, "replay")
    source = doc.get("source", "synthetic")
    seed = seed_override if seed_override is not None else _int(doc, "seed", "replay", default=0)

    if source in ("synthetic", "wide"):
        base = doc.get("base_timestamp")
        kwargs: dict[str, Any] = dict(
            count=_int(doc, "count", "replay"),
            wall_period_ns=_duration(doc, "wall_period", "replay"),
            data_spacing_ns=_duration(doc, "data_spacing", "replay"),
            shape="single" if source == "synthetic" else "wide",
            seed=seed,
        )
        if base is not None:
            kwargs["base_ts_ns"] = _timestamp(base, "replay.base_timestamp")
        if "gap_every" in doc:
            kwargs["gap_every"] = _int(doc, "gap_every", "replay")
            kwargs["gap_extra_ns"] = _duration(doc, "gap_extra", "replay", default=0)
        elif "gap_extra" in doc:
            raise ScenarioError("replay.gap_extra without replay.gap_every")
        return synthetic_schedule(**kwargs)

    if source == "csv":
        if "path" not in doc:
            raise ScenarioError("replay source csv requires a path")
        records = read_csv_records(base_dir / str(doc["path"]))
        return schedule_records(records, _duration(doc, "wall_period", "replay"))

    raise ScenarioError(f"replay.source: unknown source {source!r}")


def _real(value: Any, where: str) -> float:
    """Accept YAML ints where reals are meant, but never bools or strings."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where} must be a real number, got {value!r}")
    return float(value)


def _build_monitor(doc: Mapping) -> MonitorConfig:
    doc = _require_mapping(doc, "monitor")
    _reject_unknown(doc, _MONITOR_KEYS, "monitor")
    for field in ("threshold", "coordinates", "reference"):
        if field not in doc:
            raise ScenarioError(f"monitor is missing required key {field!r}")
    if not isinstance(doc["coordinates"], list) or not isinstance(doc["reference"], list):
        raise ScenarioError("monitor.coordinates and monitor.reference must be lists")
    kwargs: dict[str, Any] = dict(
        threshold=_real(doc["threshold"], "monitor.threshold"),
        coordinates=tuple(doc["coordinates"]),
        reference=tuple(
            _real(c, "monitor.reference") for c in doc["reference"]
        ),
    )
    if "stop_routing_key" in doc:
        kwargs["stop_routing_key"] = str(doc["stop_routing_key"])
    try:
        return MonitorConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"monitor: {exc}") from exc


def build_scenario(
    doc: Mapping,
    *,
    base_dir: str | Path = ".",
    seed_override: int | None = None,
) -> Scenario:
    """Turn a parsed scenario mapping into a Scenario."""
    doc = _require_mapping(doc, "scenario")
    _reject_unknown(doc, _SCENARIO_KEYS, "scenario")
    base_dir = Path(base_dir)

    mode = _enum(doc, "mode", ExecutionMode, "scenario", ExecutionMode.VIRTUAL)
    schedule = None
    if "replay" in doc and doc["replay"] is not None:
        schedule = _build_schedule(doc["replay"], base_dir, seed_override)
    monitor = None
    if "monitor" in doc and doc["monitor"] is not None:
        monitor = _build_monitor(doc["monitor"])
    inputs = doc.get("inputs") or {}
    inputs = dict(_require_mapping(inputs, "inputs")) if inputs else {}

    if "bridge" not in doc:
        raise ScenarioError("scenario is missing required key 'bridge'")
    try:
        return Scenario(
            name=str(doc.get("name", "scenario")),
            bridge=_build_bridge(doc["bridge"]),
            n_steps=_int(doc, "steps", "scenario"),
            step_size_ns=_duration(doc, "step_size", "scenario"),
            injected_delay_ns=_duration(doc, "injected_delay", "scenario", default=0),
            mode=mode,
            schedule=schedule,
            monitor=monitor,
            initial_inputs=inputs,
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc


def validate_scenario_doc(doc: Mapping) -> list[str]:
    """Configuration lints; returns human-readable warnings, possibly empty."""
    warnings: list[str] = []
    doc = _require_mapping(doc, "scenario")
    bridge = doc.get("bridge")
    replay = doc.get("replay")
    if not isinstance(bridge, Mapping):
        return warnings

    step_size = None
    if "step_size" in doc:
        step_size = _duration(doc, "step_size", "scenario")
    wall_period = None
    data_spacing = None
    if isinstance(replay, Mapping):
        if "wall_period" in replay:
            wall_period = _duration(replay, "wall_period", "replay")
        if "data_spacing" in replay:
            data_spacing = _duration(replay, "data_spacing", "replay")

    if step_size is not None and wall_period is not None and step_size != wall_period:
        warnings.append(
            f"step size ({step_size} ns) differs from the publication period "
            f"({wall_period} ns): steps and arrivals will drift apart"
        )
    if step_size is not None and wall_period is not None:
        lookahead = _int(bridge, "lookahead", "bridge", default=1)
        if lookahead * 4 * wall_period < step_size:
            expected = step_size // wall_period
            warnings.append(
                f"lookahead {lookahead} is far below the ~{expected} records "
                f"arriving per step: the queue will grow without bound"
            )
    if data_spacing is not None and "maxage" in bridge:
        maxage = _duration(bridge, "maxage", "bridge")
        if maxage < 2 * data_spacing:
            warnings.append(
                f"maxage ({maxage} ns) is less than twice the data spacing "
                f"({data_spacing} ns): holds will starve between records"
            )
    return warnings


def load_scenario(
    path: str | Path, seed_override: int | None = None
) -> tuple[Scenario, list[str]]:
    """Load one scenario file; returns the scenario and its lint warnings."""
    path = Path(path)
    doc = _load_yaml(path)
    warnings = validate_scenario_doc(doc)
    return build_scenario(doc, base_dir=path.parent, seed_override=seed_override), warnings


def _load_yaml(path: Path) -> Mapping:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ScenarioError(f"{path}: the top level must be a mapping")
    return doc


@dataclass(frozen=True)
class ExperimentRun:
    """One grid point: the concrete scenario plus the values that made it."""

    name: str
    scenario: Scenario
    params: Mapping[str, Any]
    warnings: tuple[str, ...]


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    runs: tuple[ExperimentRun, ...]


def _apply_override(doc: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    target = doc
    for key in keys[:-1]:
        node = target.get(key)
        if not isinstance(node, dict):
            node = {}
            target[key] = node
        target = node
    target[keys[-1]] = value


def load_experiment(
    path: str | Path, seed_override: int | None = None
) -> ExperimentPlan:
    """Load an experiment grid: base scenario document plus a sweep."""
    path = Path(path)
    doc = _load_yaml(path)
    _reject_unknown(doc, {"name", "base", "sweep"}, "experiment")
    if "base" not in doc:
        raise ScenarioError("experiment is missing required key 'base'")
    base = _require_mapping(doc["base"], "experiment.base")
    sweep = doc.get("sweep") or {}
    sweep = _require_mapping(sweep, "experiment.sweep")

    for dotted, values in sweep.items():
        if dotted not in SWEEPABLE_PATHS:
            raise ScenarioError(
                f"sweep key {dotted!r} is not sweepable; choose from "
                f"{', '.join(SWEEPABLE_PATHS)}"
            )
        if not isinstance(values, list) or not values:
            raise ScenarioError(f"sweep.{dotted} must be a non-empty list")

    names = list(sweep)
    combos = list(itertools.product(*(sweep[name] for name in names))) if names else [()]
    if len(combos) > MAX_GRID_RUNS:
        raise ScenarioError(
            f"the sweep expands to {len(combos)} runs, above the cap of {MAX_GRID_RUNS}"
        )

    experiment_name = str(doc.get("name", path.stem))
    runs = []
    for index, combo in enumerate(combos, start=1):
        run_doc = copy.deepcopy(dict(base))
        params = dict(zip(names, combo))
        for dotted, value in params.items():
            _apply_override(run_doc, dotted, value)
        run_doc["name"] = f"{experiment_name}-{index:03d}"
        warnings = validate_scenario_doc(run_doc)
        scenario = build_scenario(
            run_doc, base_dir=path.parent, seed_override=seed_override
        )
        runs.append(
            ExperimentRun(
                name=run_doc["name"],
                scenario=scenario,
                params=params,
                warnings=tuple(warnings),
            )
        )
    return ExperimentPlan(name=experiment_name, runs=tuple(runs))
