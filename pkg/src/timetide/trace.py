"""Execution traces.

Every channel push produces one record, empty frames included, stamped
with the writer's clock at the moment of the push. Completing a task body
adds a body record stamped with the clock after the work window. Traces
are compared per thread: two runs are equivalent when every thread's
projection matches record for record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional

from .values import Value, canonical_json, value_from_json, value_to_json

TRACE_HEADER = "timetide-trace v1"


@dataclass(frozen=True)
class TraceRecord:
    thread: str
    theta: int
    kind: str  # "push" or "body"
    chan: Optional[str] = None
    value: Value = None

    def line(self) -> str:
        return json.dumps(
            {
                "thread": self.thread,
                "theta": self.theta,
                "kind": self.kind,
                "chan": self.chan,
                "value": value_to_json(self.value) if self.kind == "push" else None,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


class Trace:
    """Append-only record collector with per-thread projections."""

    def __init__(self) -> None:
        self.records: list[TraceRecord] = []

    def push(self, thread: str, theta: int, chan: str, value: Value) -> None:
        self.records.append(TraceRecord(thread, theta, "push", chan, value))

    def body_complete(self, thread: str, theta: int) -> None:
        self.records.append(TraceRecord(thread, theta, "body"))

    def projection(self, thread: str) -> list[TraceRecord]:
        return [r for r in self.records if r.thread == thread]

    def threads(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.thread, None)
        return list(seen)

    def projection_lines(self, thread: str) -> list[str]:
        return [r.line() for r in self.projection(thread)]

    def dumps(self) -> str:
        lines = [TRACE_HEADER]
        lines.extend(r.line() for r in self.records)
        return "\n".join(lines) + "\n"

    @staticmethod
    def loads(text: str) -> "Trace":
        lines = text.splitlines()
        if not lines or lines[0] != TRACE_HEADER:
            raise ValueError("not a trace file")
        out = Trace()
        for line in lines[1:]:
            if not line.strip():
                continue
            obj = json.loads(line)
            value = value_from_json(obj["value"]) if obj["kind"] == "push" else None
            out.records.append(
                TraceRecord(obj["thread"], obj["theta"], obj["kind"], obj["chan"], value)
            )
        return out


def projections_equal(a: Trace, b: Trace, threads: Iterable[str]) -> Optional[str]:
    """None when every projection matches; otherwise a description of the
    first difference."""
    for t in threads:
        pa = a.projection_lines(t)
        pb = b.projection_lines(t)
        if pa == pb:
            continue
        for i, (la, lb) in enumerate(zip(pa, pb)):
            if la != lb:
                return f"thread {t!r} record {i}: {la} != {lb}"
        return f"thread {t!r}: {len(pa)} records vs {len(pb)}"
    return None
