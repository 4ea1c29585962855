"""Deterministic simulator and protocol library for leader-driven
distributed fault diagnosis on arbitrary topologies."""

from .analysis import (
    MessageStats,
    Verdict,
    check_diagnosis,
    count_messages,
    eval_cycle_formula,
    eval_single_leader_formula,
    fault_sweep,
)
from .engine import (
    CycleReport,
    LivelockError,
    NetworkFaultReport,
    RunResult,
    inter_network_exchange,
    run_cycle,
    run_periodic,
)
from .frames import (
    Direction,
    LocalFrame,
    Message,
    MessageKind,
    ResultEntry,
    ResultFrame,
    StatusBit,
    decode,
    encode,
    extract_faulty,
    new_local_frame,
    upsert_entry,
)
from .protocol import (
    TimingParams,
    classify,
    elect_leader,
    self_test,
)
from .scenario import FaultScript, Scenario, ScriptEntry, cycle_setups, parse_scenario_file
from .topology import (
    NodeId,
    Topology,
    fault_free_reachable,
    neighbors,
    parse_topology,
    random_connected_topology,
    serialize_topology,
    validate,
)

__version__ = "0.1.0"
