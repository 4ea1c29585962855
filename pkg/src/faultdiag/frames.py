"""Protocol frames, message variants, and the canonical wire encoding.

The acknowledgement frame is deliberately not a separate type: it is a copy
of the sender's local frame, so ack-style messages just carry a LocalFrame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable


class StatusBit(IntEnum):
    FAULT_FREE = 0
    FAULTY = 1


class Direction(IntEnum):
    FORWARD = 0
    BACKTRACK = 1


class FrameError(ValueError):
    """Violation of a frame invariant (conflicting status, bad leader bit)."""


class DecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class LocalFrame:
    address: str
    status: StatusBit
    leader_bit: int = 0


def new_local_frame(address: str, status: StatusBit) -> LocalFrame:
    return LocalFrame(address, StatusBit(status), 0)


@dataclass(frozen=True)
class ResultEntry:
    address: str
    status: StatusBit
    leader_bit: int = 0

    def __post_init__(self):
        if self.leader_bit not in (0, 1):
            raise FrameError(f"leader bit must be 0 or 1, got {self.leader_bit}")
        if self.leader_bit == 1 and self.status != StatusBit.FAULT_FREE:
            raise FrameError(f"faulty node {self.address!r} cannot carry leader bit 1")


@dataclass(frozen=True)
class ResultFrame:
    """Ordered per-node ledger of status and leader bits, one entry per address."""

    entries: tuple[ResultEntry, ...] = ()

    def get(self, address: str) -> ResultEntry | None:
        for e in self.entries:
            if e.address == address:
                return e
        return None

    def __contains__(self, address: str) -> bool:
        return self.get(address) is not None

    def __len__(self) -> int:
        return len(self.entries)

    def addresses(self) -> tuple[str, ...]:
        return tuple(e.address for e in self.entries)


def upsert_entry(rf: ResultFrame, entry: ResultEntry) -> ResultFrame:
    """Insert a new entry or raise an existing entry's leader bit 0 -> 1.

    Each node is tested only once, so re-inserting an address with a
    conflicting status is an error. Positions of existing entries never move.
    """
    existing = rf.get(entry.address)
    if existing is None:
        return ResultFrame(rf.entries + (entry,))
    if existing.status != entry.status:
        raise FrameError(
            f"conflicting status for {entry.address!r}: "
            f"have {int(existing.status)}, got {int(entry.status)}"
        )
    leader = max(existing.leader_bit, entry.leader_bit)
    if leader == existing.leader_bit:
        return rf
    updated = ResultEntry(existing.address, existing.status, leader)
    return ResultFrame(tuple(updated if e.address == entry.address else e for e in rf.entries))


def extract_faulty(rf: ResultFrame) -> list[ResultEntry]:
    return [e for e in rf.entries if e.status == StatusBit.FAULTY]


def render_result_frame(rf: ResultFrame) -> str:
    """Human-readable rendering: label, status, leader bit, tab-separated."""
    return "\n".join(f"{e.address}\t{int(e.status)}\t{e.leader_bit}" for e in rf.entries)


class MessageKind(IntEnum):
    VOLUNTEER_BROADCAST = 1
    VOLUNTEER_ACK = 2
    COUNT_EXCHANGE = 3
    LEADER_ANNOUNCE = 4
    PROBE_REQUEST = 5
    PROBE_ACK = 6
    RESULT_TRANSFER = 7
    FINAL_BROADCAST = 8
    INTER_NETWORK_REPORT = 9


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    src: str
    dst: str
    send_time: int
    frame: LocalFrame | None = None
    result: tuple[int, ...] | None = None  # self-test vector carried by probe acks
    ack_count: int | None = None
    broadcast_time: int | None = None
    origin: str | None = None  # count-exchange originator / report's network id
    entries: tuple[ResultEntry, ...] | None = None
    direction: Direction | None = None


# --- wire encoding -----------------------------------------------------------
#
# Length-prefixed big-endian binary layout: one kind-tag byte, labels as
# u16-length-prefixed UTF-8, status/leader bits as single bytes, tick counts
# as u64, self-test components as i64. Chosen for bit-exact golden traces.

_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v: int):
        self.parts.append(_U8.pack(v))

    def u32(self, v: int):
        self.parts.append(_U32.pack(v))

    def u64(self, v: int):
        self.parts.append(_U64.pack(v))

    def i64(self, v: int):
        self.parts.append(_I64.pack(v))

    def text(self, s: str):
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FrameError("label too long to encode")
        self.parts.append(_U16.pack(len(raw)))
        self.parts.append(raw)

    def frame(self, f: LocalFrame):
        self.text(f.address)
        self.u8(int(f.status))
        self.u8(f.leader_bit)

    def entry_list(self, entries: Iterable[ResultEntry]):
        entries = tuple(entries)
        self.u32(len(entries))
        for e in entries:
            self.text(e.address)
            self.u8(int(e.status))
            self.u8(e.leader_bit)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def _take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise DecodeError("truncated message", self.offset)
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def i64(self) -> int:
        return _I64.unpack(self._take(8))[0]

    def text(self) -> str:
        n = _U16.unpack(self._take(2))[0]
        raw = self._take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError("invalid UTF-8 in label", self.offset - n) from None

    def status(self) -> StatusBit:
        v = self.u8()
        if v not in (0, 1):
            raise DecodeError(f"invalid status bit {v}", self.offset - 1)
        return StatusBit(v)

    def bit(self) -> int:
        v = self.u8()
        if v not in (0, 1):
            raise DecodeError(f"invalid leader bit {v}", self.offset - 1)
        return v

    def frame(self) -> LocalFrame:
        addr = self.text()
        return LocalFrame(addr, self.status(), self.bit())

    def entry_list(self) -> tuple[ResultEntry, ...]:
        count = self.u32()
        out = []
        for _ in range(count):
            addr = self.text()
            st = self.status()
            lb = self.bit()
            try:
                out.append(ResultEntry(addr, st, lb))
            except FrameError as exc:
                raise DecodeError(str(exc), self.offset) from None
        return tuple(out)


def encode(m: Message) -> bytes:
    w = _Writer()
    w.u8(int(m.kind))
    w.text(m.src)
    w.text(m.dst)
    w.u64(m.send_time)
    k = m.kind
    if k == MessageKind.VOLUNTEER_BROADCAST:
        pass
    elif k in (MessageKind.VOLUNTEER_ACK, MessageKind.PROBE_REQUEST):
        w.frame(m.frame)
    elif k == MessageKind.COUNT_EXCHANGE:
        w.text(m.origin)
        w.u32(m.ack_count)
        w.u64(m.broadcast_time)
    elif k == MessageKind.LEADER_ANNOUNCE:
        w.frame(m.frame)
        w.u32(m.ack_count)
        w.u64(m.broadcast_time)
    elif k == MessageKind.PROBE_ACK:
        w.frame(m.frame)
        result = m.result or ()
        w.u8(len(result))
        for v in result:
            w.i64(v)
    elif k == MessageKind.RESULT_TRANSFER:
        w.u8(int(m.direction))
        w.entry_list(m.entries or ())
    elif k == MessageKind.FINAL_BROADCAST:
        w.entry_list(m.entries or ())
    elif k == MessageKind.INTER_NETWORK_REPORT:
        w.text(m.origin)
        w.entry_list(m.entries or ())
    else:  # pragma: no cover - kinds are exhaustive
        raise FrameError(f"cannot encode message kind {m.kind!r}")
    return w.getvalue()


def decode(data: bytes) -> Message:
    r = _Reader(data)
    raw_kind = r.u8()
    try:
        kind = MessageKind(raw_kind)
    except ValueError:
        raise DecodeError(f"unknown message kind tag {raw_kind}", 0) from None
    src = r.text()
    dst = r.text()
    send_time = r.u64()
    frame = result = ack_count = broadcast_time = origin = entries = direction = None
    if kind == MessageKind.VOLUNTEER_BROADCAST:
        pass
    elif kind in (MessageKind.VOLUNTEER_ACK, MessageKind.PROBE_REQUEST):
        frame = r.frame()
    elif kind == MessageKind.COUNT_EXCHANGE:
        origin = r.text()
        ack_count = r.u32()
        broadcast_time = r.u64()
    elif kind == MessageKind.LEADER_ANNOUNCE:
        frame = r.frame()
        ack_count = r.u32()
        broadcast_time = r.u64()
    elif kind == MessageKind.PROBE_ACK:
        frame = r.frame()
        n = r.u8()
        result = tuple(r.i64() for _ in range(n))
    elif kind == MessageKind.RESULT_TRANSFER:
        v = r.u8()
        if v not in (0, 1):
            raise DecodeError(f"invalid transfer direction {v}", r.offset - 1)
        direction = Direction(v)
        entries = r.entry_list()
    elif kind == MessageKind.FINAL_BROADCAST:
        entries = r.entry_list()
    elif kind == MessageKind.INTER_NETWORK_REPORT:
        origin = r.text()
        entries = r.entry_list()
    if r.offset != len(data):
        raise DecodeError("trailing bytes after message", r.offset)
    if kind == MessageKind.PROBE_REQUEST and frame.leader_bit != 1:
        raise DecodeError("probe request must carry leader bit 1", r.offset)
    if kind == MessageKind.PROBE_ACK and frame.leader_bit != 0:
        raise DecodeError("probe ack must carry leader bit 0", r.offset)
    if kind == MessageKind.FINAL_BROADCAST:
        for e in entries:
            if e.status != StatusBit.FAULTY:
                raise DecodeError("final broadcast may list only faulty entries", r.offset)
    return Message(
        kind=kind,
        src=src,
        dst=dst,
        send_time=send_time,
        frame=frame,
        result=result,
        ack_count=ack_count,
        broadcast_time=broadcast_time,
        origin=origin,
        entries=entries,
        direction=direction,
    )
