"""Totally ordered event log with per-cycle markers and a TSV export."""

from __future__ import annotations

from dataclasses import dataclass, field

CYCLE_START = "cycle-start"
CYCLE_END = "cycle-end"
SEND = "send"
RECV = "recv"
DROP = "drop"


def _render_value(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v) if v else "-"
    return str(v)


@dataclass(frozen=True)
class TraceEvent:
    time: int
    kind: str
    src: str
    dst: str
    data: dict

    def detail(self) -> str:
        return " ".join(f"{k}={_render_value(v)}" for k, v in self.data.items())

    def line(self) -> str:
        return f"{self.time}\t{self.kind}\t{self.src}\t{self.dst}\t{self.detail()}"


@dataclass
class Trace:
    events: list[TraceEvent] = field(default_factory=list)

    def add(self, time: int, kind: str, src: str = "-", dst: str = "-", **data):
        if self.events and time < self.events[-1].time:
            raise ValueError("trace times must be non-decreasing")
        self.events.append(TraceEvent(time, kind, src, dst, data))

    @property
    def last_time(self) -> int:
        return self.events[-1].time if self.events else 0

    def cycles(self) -> list[tuple[int, list[TraceEvent]]]:
        """Split into per-cycle segments using the cycle markers."""
        out: list[tuple[int, list[TraceEvent]]] = []
        current: list[TraceEvent] | None = None
        index = None
        for e in self.events:
            if e.kind == CYCLE_START:
                index = e.data["cycle"]
                current = [e]
            elif e.kind == CYCLE_END:
                current.append(e)
                out.append((index, current))
                current = None
            elif current is not None:
                current.append(e)
        return out

    def export(self) -> str:
        return "".join(e.line() + "\n" for e in self.events)
