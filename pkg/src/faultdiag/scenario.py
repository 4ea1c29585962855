"""Scenario configuration: fault scripts, timing, and the scenario file format.

A scenario file is UTF-8 ``key = value`` lines plus a ``[faults]`` section of
``cycle <k> <action> <node> [neighbors...]`` lines. Fault-script actions take
effect only at cycle boundaries; cycles are numbered from 1.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Iterable

from .protocol import FAULT_CRASH, FAULT_SOFTWARE, TimingParams
from .topology import Topology, parse_topology_file

ACTION_CRASH = "crash"
ACTION_SOFTWARE = "software"
ACTION_REPAIR = "repair"
ACTION_JOIN = "join"

_ACTIONS = (ACTION_CRASH, ACTION_SOFTWARE, ACTION_REPAIR, ACTION_JOIN)


class ScenarioError(ValueError):
    """Malformed scenario input or an inapplicable fault-script action."""


@dataclass(frozen=True)
class ScriptEntry:
    at_cycle: int
    action: str
    node: str
    neighbors: tuple[str, ...] = ()


@dataclass(frozen=True)
class FaultScript:
    entries: tuple[ScriptEntry, ...] = ()

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.at_cycle < 1:
                raise ScenarioError(f"cycle numbers start at 1, got {e.at_cycle}")
            if e.action not in _ACTIONS:
                raise ScenarioError(f"unknown fault action {e.action!r}")
            if e.action == ACTION_JOIN and not e.neighbors:
                raise ScenarioError(f"join of {e.node!r} needs at least one neighbor")
            if e.action != ACTION_JOIN and e.neighbors:
                raise ScenarioError(f"{e.action} takes no neighbor list")
            key = (e.node, e.at_cycle)
            if key in seen:
                raise ScenarioError(f"multiple actions for {e.node!r} in cycle {e.at_cycle}")
            seen.add(key)

    def for_cycle(self, k: int) -> tuple[ScriptEntry, ...]:
        return tuple(e for e in self.entries if e.at_cycle == k)


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    script: FaultScript = FaultScript()
    timing: TimingParams = TimingParams()
    latency_base: int = 2
    latency_jitter: int = 0
    seed: int = 0
    cycles: int = 1
    network_id: str = "net"
    gateway: str | None = None
    event_budget: int = 10**6

    def __post_init__(self):
        if self.cycles < 1:
            raise ScenarioError("cycles must be >= 1")
        if self.latency_base < 1:
            raise ScenarioError("latency base must be >= 1")
        if self.latency_jitter < 0:
            raise ScenarioError("latency jitter must be >= 0")
        hop = self.latency_base + self.latency_jitter
        if hop >= min(self.timing.t_probe, self.timing.t_bcast_wait):
            raise ScenarioError(
                "one-hop delay (base + jitter) must stay below t_probe and t_bcast_wait"
            )
        # A probe answer is a two-hop round trip; the deadline must not be
        # able to beat an honest ack back to the leader.
        if self.timing.t_probe <= 2 * hop:
            raise ScenarioError("t_probe must exceed twice the one-hop delay")
        if self.gateway is not None and self.gateway not in self.topology:
            raise ScenarioError(f"gateway {self.gateway!r} is not in the topology")


@dataclass(frozen=True)
class CycleSetup:
    """Effective network for one cycle: present nodes and their conditions."""

    cycle_index: int
    topology: Topology
    conditions: dict  # label -> None | FAULT_SOFTWARE | FAULT_CRASH

    @property
    def present(self) -> tuple[str, ...]:
        return self.topology.labels

    @property
    def crashed(self) -> tuple[str, ...]:
        return tuple(l for l in self.present if self.conditions[l] == FAULT_CRASH)

    @property
    def software(self) -> tuple[str, ...]:
        return tuple(l for l in self.present if self.conditions[l] == FAULT_SOFTWARE)

    @property
    def faulty(self) -> tuple[str, ...]:
        return tuple(l for l in self.present if self.conditions[l] is not None)

    @property
    def alive(self) -> tuple[str, ...]:
        return tuple(l for l in self.present if self.conditions[l] != FAULT_CRASH)


def cycle_setups(scenario: Scenario) -> list[CycleSetup]:
    """Apply the fault script at each cycle boundary.

    Repairs require a currently faulty node; joins require a previously
    absent node. Joined nodes get the next ordinals, in script order.
    """
    topo = scenario.topology
    conditions: dict[str, str | None] = {label: None for label in topo.labels}
    setups = []
    for k in range(1, scenario.cycles + 1):
        for e in scenario.script.for_cycle(k):
            if e.action == ACTION_JOIN:
                if e.node in topo:
                    raise ScenarioError(
                        f"cycle {k}: join of {e.node!r} but the node is already present"
                    )
                for nb in e.neighbors:
                    if nb not in topo:
                        raise ScenarioError(
                            f"cycle {k}: join neighbor {nb!r} is not present"
                        )
                topo = topo.with_node(e.node, e.neighbors)
                conditions[e.node] = None
                continue
            if e.node not in topo:
                raise ScenarioError(f"cycle {k}: {e.action} of absent node {e.node!r}")
            if e.action == ACTION_REPAIR:
                if conditions[e.node] is None:
                    raise ScenarioError(
                        f"cycle {k}: repair of {e.node!r} but the node is not faulty"
                    )
                conditions[e.node] = None
            elif e.action == ACTION_CRASH:
                conditions[e.node] = FAULT_CRASH
            elif e.action == ACTION_SOFTWARE:
                conditions[e.node] = FAULT_SOFTWARE
        setups.append(CycleSetup(k, topo, dict(conditions)))
    return setups


# --- scenario file parsing -----------------------------------------------------

_INT_KEYS = {
    "seed",
    "cycles",
    "base_latency",
    "jitter",
    "budget",
    "t_bcast_wait",
    "t_ack_window",
    "t_probe",
    "cycle_period",
    "t_count_window",
}
_STR_KEYS = {"topology", "network", "gateway"}


def parse_scenario_text(text: str, base_dir: str = ".", default_seed: int = 0) -> Scenario:
    values: dict[str, object] = {}
    script_entries: list[ScriptEntry] = []
    in_faults = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() == "[faults]":
            in_faults = True
            continue
        if in_faults:
            script_entries.append(_parse_fault_line(line, lineno))
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ScenarioError(f"line {lineno}: {key} must be an integer") from None
        elif key in _STR_KEYS:
            values[key] = value
        else:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
    if "topology" not in values:
        raise ScenarioError("scenario is missing the 'topology' key")
    topo_path = os.path.join(base_dir, str(values["topology"]))
    if not os.path.exists(topo_path):
        raise ScenarioError(f"topology file not found: {topo_path}")
    topology = parse_topology_file(topo_path)
    timing = TimingParams(
        t_bcast_wait=int(values.get("t_bcast_wait", 10)),
        t_ack_window=int(values.get("t_ack_window", 10)),
        t_probe=int(values.get("t_probe", 10)),
        cycle_period=int(values.get("cycle_period", 1000)),
        t_count_window=values.get("t_count_window"),
    )
    return Scenario(
        topology=topology,
        script=FaultScript(tuple(script_entries)),
        timing=timing,
        latency_base=int(values.get("base_latency", 2)),
        latency_jitter=int(values.get("jitter", 0)),
        seed=int(values.get("seed", default_seed)),
        cycles=int(values.get("cycles", 1)),
        network_id=str(values.get("network", "net")),
        gateway=values.get("gateway"),
        event_budget=int(values.get("budget", 10**6)),
    )


def _parse_fault_line(line: str, lineno: int) -> ScriptEntry:
    parts = line.split()
    if len(parts) < 4 or parts[0] != "cycle":
        raise ScenarioError(
            f"line {lineno}: expected 'cycle <k> <action> <node> [neighbors...]'"
        )
    try:
        k = int(parts[1])
    except ValueError:
        raise ScenarioError(f"line {lineno}: bad cycle number {parts[1]!r}") from None
    action = parts[2]
    if action not in _ACTIONS:
        raise ScenarioError(f"line {lineno}: unknown action {action!r}")
    return ScriptEntry(k, action, parts[3], tuple(parts[4:]))


def parse_scenario_file(path, default_seed: int = 0) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    scn = parse_scenario_text(text, base_dir=os.path.dirname(os.path.abspath(path)), default_seed=default_seed)
    if scn.network_id == "net":
        stem = os.path.splitext(os.path.basename(path))[0]
        scn = replace(scn, network_id=stem)
    return scn
