"""Bridge timestamped data streams into stepped co-simulation runs.

The package pairs a data bridge (bounded inbound queue, staleness-aware
output selection, change-only publication) with scenario tooling: replay
schedules, a virtual clock for deterministic runs, a reference model for
expected outputs, a distance monitor, and a CLI.
"""

from .bridge import (
    Bridge,
    BridgeConfig,
    Decision,
    DecisionKind,
    IngestMode,
    Policy,
    StepReport,
    select_output,
)
from .errors import (
    CosimError,
    DecodeError,
    EncodeError,
    IngressError,
    KindMismatch,
    RunAborted,
    ScenarioError,
    StepTimeout,
    TransportClosed,
    TransportError,
    UnknownVariable,
)
from .monitor import MonitorConfig, MonitorReport, MonitorUnit, monitor_step
from .oracle import OracleRun, OracleStep, oracle_outputs, oracle_select
from .orchestrator import ExecutionMode, RunSummary, RunTrace, Scenario, run
from .replay import (
    ReplaySchedule,
    TimedRecord,
    WallclockReplayer,
    read_csv_records,
    schedule_records,
    synthetic_schedule,
)
from .report import read_trace_rows, render_figures, write_trace_csv
from .scenariofile import load_experiment, load_scenario, validate_scenario_doc
from .timebase import (
    Direction,
    ValueKind,
    VariableDecl,
    format_duration,
    format_timestamp,
    parse_duration,
    parse_timestamp,
)
from .transport import (
    Envelope,
    InMemoryBroker,
    TcpBrokerClient,
    TcpBrokerServer,
    TimestampedRecord,
    decode_record,
    encode_record,
)

__version__ = "0.1.0"

__all__ = [
    "Bridge",
    "BridgeConfig",
    "CosimError",
    "Decision",
    "DecisionKind",
    "DecodeError",
    "Direction",
    "EncodeError",
    "Envelope",
    "ExecutionMode",
    "IngestMode",
    "IngressError",
    "InMemoryBroker",
    "KindMismatch",
    "MonitorConfig",
    "MonitorReport",
    "MonitorUnit",
    "OracleRun",
    "OracleStep",
    "Policy",
    "ReplaySchedule",
    "RunAborted",
    "RunSummary",
    "RunTrace",
    "Scenario",
    "ScenarioError",
    "StepReport",
    "StepTimeout",
    "TcpBrokerClient",
    "TcpBrokerServer",
    "TimedRecord",
    "TimestampedRecord",
    "TransportClosed",
    "TransportError",
    "UnknownVariable",
    "ValueKind",
    "VariableDecl",
    "WallclockReplayer",
    "decode_record",
    "encode_record",
    "format_duration",
    "format_timestamp",
    "load_experiment",
    "load_scenario",
    "monitor_step",
    "oracle_outputs",
    "oracle_select",
    "parse_duration",
    "parse_timestamp",
    "read_csv_records",
    "read_trace_rows",
    "render_figures",
    "run",
    "schedule_records",
    "select_output",
    "synthetic_schedule",
    "validate_scenario_doc",
    "write_trace_csv",
]
