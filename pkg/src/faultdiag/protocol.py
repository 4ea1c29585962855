"""Per-node state machine for the two-stage diagnosis protocol.

Stage one elects a single first leader: fault-free nodes that see no
volunteer broadcast within their (staggered) wait window volunteer, collect
acknowledgements, flood their ack counts to every other volunteer, and the
best candidate announces itself. Stage two is a depth-first chain of leaders:
each leader probes its unexplored neighbours, records their status in the
travelling result frame, hands leadership to its fastest fault-free responder,
and backtracks when it runs out of candidates. The last leader broadcasts the
faulty list to everyone.

Transition handlers are deterministic: identical (state, event) pairs yield
identical outputs. All randomness (latencies, wait staggers) lives in the
engine and reaches nodes only through event timing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .frames import (
    Direction,
    LocalFrame,
    Message,
    MessageKind,
    ResultEntry,
    ResultFrame,
    StatusBit,
    extract_faulty,
    new_local_frame,
    upsert_entry,
)
from .topology import NodeId

FAULT_SOFTWARE = "software"
FAULT_CRASH = "crash"


class ProtocolError(RuntimeError):
    """A transition that the protocol's invariants rule out."""


# --- self-test ----------------------------------------------------------------


def _battery(perturb: int = 0) -> tuple[int, int, int, int]:
    # Four check groups: I/O-style checksum, integer arithmetic, a
    # floating-point computation reduced to its bit pattern, and a memory walk.
    data = bytes(range(64))
    io_check = 0
    for b in data:
        io_check = (io_check * 131 + b) & 0xFFFFFFFF
    arith = 1
    for k in range(1, 20):
        arith = (arith * k + k * k) % 1_000_003
    fp = 0.0
    for k in range(1, 12):
        fp += 1.0 / (k * k)
    fp_bits = int.from_bytes(__import__("struct").pack(">d", fp), "big")
    mem = [((i * 2654435761) & 0xFFFF) for i in range(32)]
    mem_check = 0
    for v in mem:
        mem_check = (mem_check ^ v) * 16777619 & 0xFFFFFFFF
    vector = [io_check, arith, fp_bits & 0x7FFFFFFFFFFFFFFF, mem_check]
    if perturb:
        idx = perturb % 4
        vector[idx] ^= 1 + (perturb % 251)
    return tuple(vector)


REFERENCE_RESULT: tuple[int, int, int, int] = _battery()


def self_test(fault: str | None = None, salt: int = 0):
    """Run the local check battery.

    Returns ``(result_vector, status)``; a crashed node produces nothing
    (``None``). A software fault perturbs at least one component, which the
    node itself notices, so its own status bit is already 1.
    """
    if fault == FAULT_CRASH:
        return None
    if fault == FAULT_SOFTWARE:
        return _battery(perturb=salt * 4 + 1), StatusBit.FAULTY
    if fault is not None:
        raise ValueError(f"unknown fault kind {fault!r}")
    return REFERENCE_RESULT, StatusBit.FAULT_FREE


def classify(expected: tuple[int, ...], observed: tuple[int, ...] | None) -> StatusBit:
    """Compare a carried self-test result against the reference; silence is faulty."""
    if observed is None:
        return StatusBit.FAULTY
    return StatusBit.FAULT_FREE if tuple(observed) == tuple(expected) else StatusBit.FAULTY


# --- election helpers -----------------------------------------------------------


def elect_leader(candidates) -> NodeId:
    """Pick the winning volunteer: max ack count, then earliest broadcast,
    then smallest ordinal."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("cannot elect a leader from zero candidates")
    best = min(candidates, key=lambda c: (-c[1], c[2], c[0].ordinal))
    return best[0]


def _announce_key(ack_count: int, broadcast_time: int, ordinal: int) -> tuple[int, int, int]:
    # Total order over announcers; smaller is better.
    return (-ack_count, broadcast_time, ordinal)


# --- timing ---------------------------------------------------------------------


@dataclass(frozen=True)
class TimingParams:
    """Protocol wait windows, in simulation ticks.

    ``t_count_window`` bounds how long volunteers wait for each other's ack
    counts to flood through the network before deciding; left ``None`` the
    engine scales it with the node count so the flood always completes.
    """

    t_bcast_wait: int = 10
    t_ack_window: int = 10
    t_probe: int = 10
    cycle_period: int = 1000
    t_count_window: int | None = None

    def __post_init__(self):
        for name in ("t_bcast_wait", "t_ack_window", "t_probe", "cycle_period"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.t_probe >= self.cycle_period:
            raise ValueError("t_probe must be smaller than cycle_period")
        if self.t_count_window is not None and self.t_count_window <= 0:
            raise ValueError("t_count_window must be strictly positive")


class NodePhase(Enum):
    IDLE = "idle"
    SELF_TEST = "self-test"
    AWAIT_BROADCAST = "await-broadcast"
    VOLUNTEERING = "volunteering"
    COUNT_EXCHANGE = "count-exchange"
    LEADER_PROBING = "leader-probing"
    AWAITING_NEXT_LEADER = "awaiting-next-leader"
    DONE = "done"


class TimerKind(Enum):
    VOLUNTEER_DEADLINE = "volunteer-deadline"
    ACK_WINDOW = "ack-window"
    ELECTION_DECIDE = "election-decide"
    BEGIN_DIAGNOSIS = "begin-diagnosis"
    PROBE_DEADLINE = "probe-deadline"


@dataclass(frozen=True)
class TimerRequest:
    kind: TimerKind
    at: int
    payload: str | None = None


@dataclass(frozen=True)
class Note:
    """Trace annotation emitted by a transition (observations, not errors)."""

    kind: str
    dst: str = "-"
    data: dict = field(default_factory=dict)


@dataclass
class StepOutput:
    messages: list[Message] = field(default_factory=list)
    timers: list[TimerRequest] = field(default_factory=list)
    notes: list[Note] = field(default_factory=list)


class Node:
    """One node's per-cycle protocol state.

    The engine owns the clock and the queue; nodes only react to
    ``start_cycle``, timers, and message deliveries, and emit messages,
    timer requests, and trace notes in return. Crashed nodes never get a
    ``Node`` at all.
    """

    def __init__(
        self,
        ident: NodeId,
        neighbors: tuple[NodeId, ...],
        universe: tuple[NodeId, ...],
        timing: TimingParams,
        fault: str | None,
        t_elect: int,
        begin_delay: int,
        salt: int = 0,
    ):
        if fault == FAULT_CRASH:
            raise ProtocolError("crashed nodes take no part in the protocol")
        self.ident = ident
        self.label = ident.label
        self.ordinal = ident.ordinal
        self.neighbor_ids = tuple(sorted(neighbors))
        self.universe = tuple(sorted(universe))
        self._ordinals = {u.label: u.ordinal for u in self.universe}
        self.timing = timing
        self.fault = fault
        self.t_elect = t_elect
        self.begin_delay = begin_delay
        self.salt = salt

        self.phase = NodePhase.IDLE
        self.result: tuple[int, ...] | None = None
        self.status: StatusBit | None = None
        self.self_frame: LocalFrame | None = None

        # election state
        self.acked_to: str | None = None
        self.volunteered = False
        self.collecting = False
        self.bcast_time: int | None = None
        self.ack_count = 0
        self.heard: dict[str, tuple[int, int, int]] = {}  # origin -> (count, btime, ordinal)
        self.flood_seen: set[str] = set()
        self.announced = False
        self._own_key: tuple[int, int, int] | None = None
        self._best_rival: tuple[tuple[int, int, int], str] | None = None

        # diagnosis state
        self.result_frame: ResultFrame | None = None
        self.parent: str | None = None
        self.tried: set[str] = set()
        self.response_times: dict[str, int] = {}
        self.pending_probes: dict[str, int] = {}  # neighbour -> probe send time
        self.known_faulty: list[str] | None = None

    # -- helpers ----------------------------------------------------------

    def _msg(self, kind: MessageKind, dst: str, now: int, **fields) -> Message:
        return Message(kind=kind, src=self.label, dst=dst, send_time=now, **fields)

    def _others(self):
        return [u.label for u in self.universe if u.label != self.label]

    # -- entry points -------------------------------------------------------

    def start_cycle(self, now: int, volunteer_at: int) -> StepOutput:
        out = StepOutput()
        self.phase = NodePhase.SELF_TEST
        self.result, self.status = self_test(self.fault, self.salt)
        self.self_frame = new_local_frame(self.label, self.status)
        data = {"status": int(self.status)}
        if self.fault:
            data["fault"] = self.fault
        out.notes.append(Note("self-test", data=data))
        if self.status == StatusBit.FAULT_FREE:
            self.phase = NodePhase.AWAIT_BROADCAST
            out.timers.append(TimerRequest(TimerKind.VOLUNTEER_DEADLINE, volunteer_at))
        else:
            # Faulty-status nodes never volunteer but keep answering probes
            # and acknowledging broadcasts with their failing status.
            self.phase = NodePhase.DONE
        return out

    def handle_timer(self, kind: TimerKind, payload: str | None, now: int) -> StepOutput:
        out = StepOutput()
        if kind == TimerKind.VOLUNTEER_DEADLINE:
            self._on_volunteer_deadline(now, out)
        elif kind == TimerKind.ACK_WINDOW:
            self._on_ack_window(now, out)
        elif kind == TimerKind.ELECTION_DECIDE:
            self._on_election_decide(now, out)
        elif kind == TimerKind.BEGIN_DIAGNOSIS:
            self._on_begin_diagnosis(now, out)
        elif kind == TimerKind.PROBE_DEADLINE:
            self._on_probe_deadline(payload, now, out)
        return out

    def handle_message(self, msg: Message, now: int) -> StepOutput:
        out = StepOutput()
        k = msg.kind
        if k == MessageKind.VOLUNTEER_BROADCAST:
            self._on_volunteer_broadcast(msg, now, out)
        elif k == MessageKind.VOLUNTEER_ACK:
            if self.volunteered and self.collecting:
                self.ack_count += 1
        elif k == MessageKind.COUNT_EXCHANGE:
            self._on_count_exchange(msg, now, out)
        elif k == MessageKind.LEADER_ANNOUNCE:
            key = _announce_key(msg.ack_count, msg.broadcast_time, self._ordinals[msg.src])
            if self._best_rival is None or key < self._best_rival[0]:
                self._best_rival = (key, msg.src)
        elif k == MessageKind.PROBE_REQUEST:
            out.messages.append(
                self._msg(
                    MessageKind.PROBE_ACK,
                    msg.src,
                    now,
                    frame=self.self_frame,
                    result=self.result,
                )
            )
        elif k == MessageKind.PROBE_ACK:
            self._on_probe_ack(msg, now, out)
        elif k == MessageKind.RESULT_TRANSFER:
            if msg.direction == Direction.FORWARD:
                self._on_forward_transfer(msg, now, out)
            else:
                self._on_backtrack(msg, now, out)
        elif k == MessageKind.FINAL_BROADCAST:
            self.known_faulty = [e.address for e in msg.entries]
            self.phase = NodePhase.DONE
        return out

    # -- leader election ------------------------------------------------------

    def _on_volunteer_broadcast(self, msg: Message, now: int, out: StepOutput):
        if self.volunteered or self.acked_to is not None:
            # Acknowledge only the first broadcaster; competitors stay silent.
            return
        self.acked_to = msg.src
        out.messages.append(
            self._msg(MessageKind.VOLUNTEER_ACK, msg.src, now, frame=self.self_frame)
        )

    def _on_volunteer_deadline(self, now: int, out: StepOutput):
        if self.acked_to is not None or self.volunteered:
            return  # stale: a broadcast arrived first
        if self.status != StatusBit.FAULT_FREE:
            return
        self.volunteered = True
        self.collecting = True
        self.bcast_time = now
        self.phase = NodePhase.VOLUNTEERING
        for nb in self.neighbor_ids:
            out.messages.append(self._msg(MessageKind.VOLUNTEER_BROADCAST, nb.label, now))
        out.timers.append(TimerRequest(TimerKind.ACK_WINDOW, now + self.timing.t_ack_window))

    def _on_ack_window(self, now: int, out: StepOutput):
        if not self.volunteered:
            return
        self.collecting = False
        self.phase = NodePhase.COUNT_EXCHANGE
        self.heard[self.label] = (self.ack_count, self.bcast_time, self.ordinal)
        self.flood_seen.add(self.label)
        for nb in self.neighbor_ids:
            out.messages.append(
                self._msg(
                    MessageKind.COUNT_EXCHANGE,
                    nb.label,
                    now,
                    origin=self.label,
                    ack_count=self.ack_count,
                    broadcast_time=self.bcast_time,
                )
            )
        out.timers.append(TimerRequest(TimerKind.ELECTION_DECIDE, self.t_elect))

    def _on_count_exchange(self, msg: Message, now: int, out: StepOutput):
        if msg.origin in self.flood_seen:
            return
        self.flood_seen.add(msg.origin)
        self.heard[msg.origin] = (msg.ack_count, msg.broadcast_time, self._ordinals[msg.origin])
        # Flood with duplicate suppression: volunteers may not be adjacent.
        for nb in self.neighbor_ids:
            if nb.label != msg.src:
                out.messages.append(
                    self._msg(
                        MessageKind.COUNT_EXCHANGE,
                        nb.label,
                        now,
                        origin=msg.origin,
                        ack_count=msg.ack_count,
                        broadcast_time=msg.broadcast_time,
                    )
                )

    def _on_election_decide(self, now: int, out: StepOutput):
        if not self.volunteered:
            return
        candidates = [
            (NodeId(ordinal, label), count, btime)
            for label, (count, btime, ordinal) in self.heard.items()
        ]
        winner = elect_leader(candidates)
        if winner.label != self.label:
            # Losing volunteers never announce; their ack state is discarded.
            self.phase = NodePhase.DONE
            return
        self.announced = True
        self._own_key = _announce_key(self.ack_count, self.bcast_time, self.ordinal)
        frame = LocalFrame(self.label, StatusBit.FAULT_FREE, 1)
        for other in self._others():
            out.messages.append(
                self._msg(
                    MessageKind.LEADER_ANNOUNCE,
                    other,
                    now,
                    frame=frame,
                    ack_count=self.ack_count,
                    broadcast_time=self.bcast_time,
                )
            )
        out.timers.append(TimerRequest(TimerKind.BEGIN_DIAGNOSIS, now + self.begin_delay))

    def _on_begin_diagnosis(self, now: int, out: StepOutput):
        if not self.announced:
            return
        if self._best_rival is not None and self._best_rival[0] < self._own_key:
            # Another component's announcer outranks us; exactly one chain runs.
            out.notes.append(Note("announce-yield", data={"winner": self._best_rival[1]}))
            self.announced = False
            self.phase = NodePhase.DONE
            return
        self.self_frame = LocalFrame(self.label, StatusBit.FAULT_FREE, 1)
        self._become_leader(ResultFrame(), parent=None, now=now, out=out)

    # -- fault diagnosis ------------------------------------------------------

    def _become_leader(self, rf: ResultFrame, parent: str | None, now: int, out: StepOutput):
        existing = rf.get(self.label)
        if existing is not None and existing.leader_bit == 1:
            raise ProtocolError(f"{self.label} was already a leader")
        if existing is not None and existing.status != StatusBit.FAULT_FREE:
            raise ProtocolError(f"{self.label} is marked faulty and cannot lead")
        self.result_frame = upsert_entry(rf, ResultEntry(self.label, StatusBit.FAULT_FREE, 1))
        self.parent = parent
        self.phase = NodePhase.LEADER_PROBING
        self.self_frame = LocalFrame(self.label, StatusBit.FAULT_FREE, 1)
        out.notes.append(Note("leader", data={"parent": parent or "-"}))
        frame = self.self_frame
        unexplored = [nb for nb in self.neighbor_ids if nb.label not in self.result_frame]
        for nb in unexplored:
            self.pending_probes[nb.label] = now
            out.messages.append(self._msg(MessageKind.PROBE_REQUEST, nb.label, now, frame=frame))
            out.timers.append(
                TimerRequest(TimerKind.PROBE_DEADLINE, now + self.timing.t_probe, payload=nb.label)
            )
        if not unexplored:
            self._advance(now, out)

    def _on_probe_ack(self, msg: Message, now: int, out: StepOutput):
        if self.phase != NodePhase.LEADER_PROBING or msg.src not in self.pending_probes:
            out.notes.append(Note("violation", dst=msg.src, data={"what": "unexpected-probe-ack"}))
            return
        sent_at = self.pending_probes.pop(msg.src)
        rtt = now - sent_at
        status = classify(REFERENCE_RESULT, msg.result)
        self.result_frame = upsert_entry(self.result_frame, ResultEntry(msg.src, status, 0))
        self.response_times[msg.src] = rtt
        out.notes.append(
            Note("probe-result", dst=msg.src, data={"status": int(status), "rtt": rtt, "via": "ack"})
        )
        if not self.pending_probes:
            self._advance(now, out)

    def _on_probe_deadline(self, neighbor: str, now: int, out: StepOutput):
        if neighbor not in self.pending_probes:
            return  # answered in time
        del self.pending_probes[neighbor]
        self.result_frame = upsert_entry(self.result_frame, ResultEntry(neighbor, StatusBit.FAULTY, 0))
        out.notes.append(
            Note("probe-result", dst=neighbor, data={"status": 1, "via": "timeout"})
        )
        if self.phase == NodePhase.LEADER_PROBING and not self.pending_probes:
            self._advance(now, out)

    def select_next_leader(self) -> str | None:
        """Fastest fault-free responder of this leader not yet tried, by
        (response time, ordinal)."""
        rf = self.result_frame
        best = None
        for label, rtt in self.response_times.items():
            if label in self.tried:
                continue
            entry = rf.get(label)
            if entry is None or entry.status != StatusBit.FAULT_FREE or entry.leader_bit == 1:
                continue
            key = (rtt, self._ordinals[label])
            if best is None or key < best[0]:
                best = (key, label)
        return best[1] if best else None

    def _advance(self, now: int, out: StepOutput):
        rf = self.result_frame
        nxt = self.select_next_leader()
        if nxt is not None:
            self.tried.add(nxt)
            out.messages.append(
                self._msg(
                    MessageKind.RESULT_TRANSFER,
                    nxt,
                    now,
                    direction=Direction.FORWARD,
                    entries=rf.entries,
                )
            )
            self.result_frame = None
            self.phase = NodePhase.AWAITING_NEXT_LEADER
            return
        covered = all(u.label in rf for u in self.universe)
        unled = any(
            e.status == StatusBit.FAULT_FREE and e.leader_bit == 0 for e in rf.entries
        )
        if covered and not unled:
            # Whole network explored: the most recent leader reports directly.
            self._finalize(rf, appended=(), now=now, out=out)
        elif self.parent is not None:
            out.messages.append(
                self._msg(
                    MessageKind.RESULT_TRANSFER,
                    self.parent,
                    now,
                    direction=Direction.BACKTRACK,
                    entries=rf.entries,
                )
            )
            self.result_frame = None
            self.phase = NodePhase.DONE
        else:
            # First leader exhausted: whatever was never reached is, by
            # assumption, indistinguishable from a failed node.
            missing = [u.label for u in self.universe if u.label not in rf]
            for label in missing:
                rf = upsert_entry(rf, ResultEntry(label, StatusBit.FAULTY, 0))
            self._finalize(rf, appended=tuple(missing), now=now, out=out)

    def _on_forward_transfer(self, msg: Message, now: int, out: StepOutput):
        rf = ResultFrame(msg.entries)
        self._become_leader(rf, parent=msg.src, now=now, out=out)

    def _on_backtrack(self, msg: Message, now: int, out: StepOutput):
        if msg.src not in self.tried:
            out.notes.append(
                Note("violation", dst=msg.src, data={"what": "backtrack-to-non-leader"})
            )
            return
        self.result_frame = ResultFrame(msg.entries)
        self.phase = NodePhase.LEADER_PROBING
        self._advance(now, out)

    def _finalize(self, rf: ResultFrame, appended: tuple[str, ...], now: int, out: StepOutput):
        self.result_frame = rf
        faulty = extract_faulty(rf)
        faulty_labels = [e.address for e in faulty]
        for other in self._others():
            out.messages.append(
                self._msg(MessageKind.FINAL_BROADCAST, other, now, entries=tuple(faulty))
            )
        self.known_faulty = list(faulty_labels)
        self.phase = NodePhase.DONE
        out.notes.append(
            Note(
                "finalize",
                data={
                    "faulty": faulty_labels,
                    "appended": list(appended),
                    "count": len(faulty_labels),
                },
            )
        )
