"""Deterministic discrete-event simulator driving the protocol nodes.

One simulation is a single-threaded run over a global event queue. Equal-time
events are ordered by (acting node ordinal, push sequence), which together
with the seeded latency model makes every run bit-reproducible: the same
scenario and seed yield byte-identical trace exports.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from . import trace as tr
from .analysis import MessageStats, cycle_message_stats
from .frames import Direction, Message, MessageKind, ResultEntry
from .protocol import FAULT_CRASH, Node, StatusBit, TimerKind, TimerRequest
from .scenario import CycleSetup, Scenario, cycle_setups
from .topology import NodeId


class LivelockError(RuntimeError):
    def __init__(self, cycle_index: int, budget: int, pending: list[str]):
        sample = "; ".join(pending[:5])
        super().__init__(
            f"cycle {cycle_index} exceeded the event budget of {budget}; "
            f"pending events: {sample}"
        )
        self.pending = pending


def mix64(*parts: int) -> int:
    """Stable 64-bit mixer (no reliance on Python's randomized str hashing)."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h ^= (p & 0xFFFFFFFFFFFFFFFF) + 0x9E3779B97F4A7C15 + ((h << 6) & 0xFFFFFFFFFFFFFFFF) + (h >> 2)
        h &= 0xFFFFFFFFFFFFFFFF
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        h ^= h >> 31
    return h


def link_delay(seed: int, src_ord: int, dst_ord: int, seq: int, base: int, jitter: int) -> int:
    """Per-link delay: base plus seeded jitter in [0, jitter]."""
    if jitter == 0:
        return base
    return base + mix64(seed, 0x11, src_ord, dst_ord, seq) % (jitter + 1)


def volunteer_stagger(seed: int, ordinal: int, jitter: int) -> int:
    """Seeded per-node stagger of the volunteer wait expiry, in [0, jitter]."""
    if jitter == 0:
        return 0
    return mix64(seed, 0x57, ordinal) % (jitter + 1)


@dataclass(frozen=True)
class CycleReport:
    cycle_index: int
    leaders_in_order: tuple[str, ...]
    faulty_found: tuple[str, ...]
    message_stats: MessageStats
    terminated: bool


@dataclass(frozen=True)
class RunResult:
    reports: list[CycleReport]
    trace: tr.Trace


def _send_data(msg: Message) -> dict:
    data: dict = {"msg": msg.kind.name}
    if msg.kind == MessageKind.COUNT_EXCHANGE:
        data.update(origin=msg.origin, count=msg.ack_count, btime=msg.broadcast_time)
    elif msg.kind == MessageKind.LEADER_ANNOUNCE:
        data.update(count=msg.ack_count, btime=msg.broadcast_time)
    elif msg.kind == MessageKind.RESULT_TRANSFER:
        direction = "forward" if msg.direction == Direction.FORWARD else "backtrack"
        data.update(direction=direction, entries=len(msg.entries))
    elif msg.kind == MessageKind.FINAL_BROADCAST:
        data["faulty"] = [e.address for e in msg.entries]
    elif msg.kind in (MessageKind.VOLUNTEER_ACK, MessageKind.PROBE_ACK):
        data["status"] = int(msg.frame.status)
    return data


def _simulate_cycle(scenario: Scenario, setup: CycleSetup, t0: int, trace: tr.Trace) -> CycleReport:
    topo = setup.topology
    timing = scenario.timing
    base, jitter = scenario.latency_base, scenario.latency_jitter
    universe = topo.nodes()
    n = len(universe)
    conditions = setup.conditions

    count_window = timing.t_count_window or (n + 1) * (base + jitter) + 1
    t_elect = t0 + timing.t_bcast_wait + timing.t_ack_window + count_window
    begin_delay = base + jitter + 1

    trace.add(
        t0,
        tr.CYCLE_START,
        data={
            "cycle": setup.cycle_index,
            "n": n,
            "crashed": sorted(setup.crashed),
            "software": sorted(setup.software),
        },
    )

    nodes: dict[str, Node] = {}
    for nid in universe:
        cond = conditions[nid.label]
        if cond == FAULT_CRASH:
            continue
        neighbors = tuple(
            NodeId(j, topo.label_of(j)) for j in topo.adj_ordinals(nid.ordinal)
        )
        nodes[nid.label] = Node(
            ident=nid,
            neighbors=neighbors,
            universe=universe,
            timing=timing,
            fault=cond,
            t_elect=t_elect,
            begin_delay=begin_delay,
            salt=nid.ordinal,
        )

    heap: list = []
    push_seq = 0
    msg_seq = 0
    events_processed = 0
    last_time = t0

    def push(time: int, actor_ord: int, item):
        nonlocal push_seq
        push_seq += 1
        heapq.heappush(heap, (time, actor_ord, push_seq, item))

    def process_output(label: str, now: int, out):
        nonlocal msg_seq
        src_ord = topo.ordinal_of(label)
        for note in out.notes:
            trace.add(now, note.kind, src=label, dst=note.dst, **note.data)
        for msg in out.messages:
            msg_seq += 1
            data = _send_data(msg)
            dst_ord = topo.ordinal_of(msg.dst)
            if conditions.get(msg.dst) == FAULT_CRASH:
                trace.add(now, tr.DROP, src=label, dst=msg.dst, **data, reason="crashed")
                continue
            trace.add(now, tr.SEND, src=label, dst=msg.dst, **data)
            arrival = now + link_delay(scenario.seed, src_ord, dst_ord, msg_seq, base, jitter)
            push(arrival, dst_ord, msg)
        for timer in out.timers:
            push(timer.at, src_ord, timer)

    for nid in universe:
        node = nodes.get(nid.label)
        if node is None:
            continue
        stagger = volunteer_stagger(scenario.seed, nid.ordinal, jitter)
        volunteer_at = t0 + timing.t_bcast_wait - stagger
        out = node.start_cycle(t0, volunteer_at)
        process_output(nid.label, t0, out)

    while heap:
        events_processed += 1
        if events_processed > scenario.event_budget:
            pending = [
                f"t={t} {item.kind.name if isinstance(item, Message) else item.kind.value}"
                for t, _, _, item in heapq.nsmallest(5, heap)
            ]
            raise LivelockError(setup.cycle_index, scenario.event_budget, pending)
        time, actor_ord, _, item = heapq.heappop(heap)
        last_time = time
        label = topo.label_of(actor_ord)
        node = nodes[label]
        if isinstance(item, Message):
            trace.add(time, tr.RECV, src=item.src, dst=label, **_send_data(item))
            out = node.handle_message(item, time)
        elif isinstance(item, TimerRequest):
            out = node.handle_timer(item.kind, item.payload, time)
        else:  # pragma: no cover
            raise RuntimeError(f"unknown queue item {item!r}")
        process_output(label, time, out)

    trace.add(last_time, tr.CYCLE_END, data={"cycle": setup.cycle_index, "events": events_processed})

    segment = trace.cycles()[-1][1]
    leaders = tuple(e.src for e in segment if e.kind == "leader")
    finalizes = [e for e in segment if e.kind == "finalize"]
    faulty = tuple(finalizes[0].data["faulty"]) if finalizes else ()
    stats = cycle_message_stats(segment)
    return CycleReport(
        cycle_index=setup.cycle_index,
        leaders_in_order=leaders,
        faulty_found=faulty,
        message_stats=stats,
        terminated=True,
    )


def run_periodic(scenario: Scenario) -> RunResult:
    """Run every cycle of the scenario on fresh per-cycle protocol state.

    Cycles start at multiples of ``cycle_period``; if a cycle's event horizon
    overruns the period, the next one starts right after quiescence so trace
    times stay monotone.
    """
    setups = cycle_setups(scenario)
    trace = tr.Trace()
    reports = []
    next_free = 0
    for setup in setups:
        nominal = (setup.cycle_index - 1) * scenario.timing.cycle_period
        t0 = max(nominal, next_free)
        reports.append(_simulate_cycle(scenario, setup, t0, trace))
        next_free = trace.last_time + 1
    return RunResult(reports, trace)


def run_cycle(scenario: Scenario, cycle_index: int = 1):
    """Run a single cycle (applying the script up to it); returns (report, trace)."""
    setups = cycle_setups(scenario)
    if not (1 <= cycle_index <= len(setups)):
        raise ValueError(f"cycle {cycle_index} outside 1..{len(setups)}")
    trace = tr.Trace()
    t0 = (cycle_index - 1) * scenario.timing.cycle_period
    report = _simulate_cycle(scenario, setups[cycle_index - 1], t0, trace)
    return report, trace


# --- inter-network exchange ------------------------------------------------------


@dataclass(frozen=True)
class NetworkFaultReport:
    network_id: str
    gateway: str
    faulty: tuple[str, ...]


@dataclass(frozen=True)
class ExchangeView:
    network_id: str
    gateway: str
    received: tuple[tuple[str, tuple[str, ...]], ...]  # (origin network, faulty labels)


def inter_network_exchange(reports: list[NetworkFaultReport]) -> list[ExchangeView]:
    """Deliver every network's faulty list, verbatim, to each peer's gateway."""
    views = []
    for rep in reports:
        received = tuple(
            (other.network_id, other.faulty) for other in reports if other is not rep
        )
        views.append(ExchangeView(rep.network_id, rep.gateway, received))
    return views


def exchange_messages(reports: list[NetworkFaultReport], send_time: int = 0) -> list[Message]:
    """The on-the-wire form of an exchange, one report message per peer pair."""
    msgs = []
    for rep in reports:
        entries = tuple(ResultEntry(label, StatusBit.FAULTY, 0) for label in rep.faulty)
        for other in reports:
            if other is rep:
                continue
            msgs.append(
                Message(
                    kind=MessageKind.INTER_NETWORK_REPORT,
                    src=rep.gateway,
                    dst=other.gateway,
                    send_time=send_time,
                    origin=rep.network_id,
                    entries=entries,
                )
            )
    return msgs


def default_gateway(setup_topology, faulty: tuple[str, ...]) -> str:
    """Lowest-ordinal fault-free node, the default exchange endpoint."""
    for label in setup_topology.labels:
        if label not in faulty:
            return label
    raise ValueError("no fault-free node available as gateway")
