"""Kernel program representation.

The surface language lowers to a small set of statements: nothing, var
declaration, assignment, expression, send, sync, if, seq, loop, abort,
checkabort. Terms are immutable and compare structurally, which the golden
tests and the state explorer both rely on.

Sequencing is a right-nested cons (`KSeq(head, tail)`) so the small-step
rules can rewrite the head cheaply.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .diagnostics import LoweringError
from .values import EMPTY, Value

_sync_uids = itertools.count(1)


# ---------------------------------------------------------------- expressions


class KExpr:
    __slots__ = ()


@dataclass(frozen=True)
class KInt(KExpr):
    value: int


@dataclass(frozen=True)
class KFloat(KExpr):
    value: float


@dataclass(frozen=True)
class KBool(KExpr):
    value: bool


@dataclass(frozen=True)
class KVar(KExpr):
    name: str


@dataclass(frozen=True)
class KRead(KExpr):
    """Sample a channel's most recent popped value; clears freshness."""

    chan: str


@dataclass(frozen=True)
class KFresh(KExpr):
    chan: str


@dataclass(frozen=True)
class KUnary(KExpr):
    op: str
    operand: KExpr


@dataclass(frozen=True)
class KBinary(KExpr):
    op: str
    left: KExpr
    right: KExpr


@dataclass(frozen=True)
class KCall(KExpr):
    func: str
    args: tuple[KExpr, ...]


# ---------------------------------------------------------------- statements


class KTerm:
    __slots__ = ()


@dataclass(frozen=True)
class KNothing(KTerm):
    pass


NOTHING = KNothing()


@dataclass(frozen=True)
class KVarDecl(KTerm):
    name: str


@dataclass(frozen=True)
class KAssign(KTerm):
    name: str
    value: KExpr


@dataclass(frozen=True)
class KExprStmt(KTerm):
    expr: KExpr


@dataclass(frozen=True)
class KSend(KTerm):
    chan: str
    value: KExpr


@dataclass(frozen=True)
class KSync(KTerm):
    """Advance the local clock by `amount` unit ticks.

    `uid` identifies the statement occurrence (task metadata points at the
    duration sync) but does not participate in structural equality.
    """

    amount: int
    uid: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.amount < 1:
            raise LoweringError(f"sync amount must be positive, got {self.amount}")
        if self.uid == 0:
            object.__setattr__(self, "uid", next(_sync_uids))


@dataclass(frozen=True)
class KIf(KTerm):
    cond: KExpr
    then: KTerm
    els: KTerm


@dataclass(frozen=True)
class KSeq(KTerm):
    head: KTerm
    tail: KTerm


@dataclass(frozen=True)
class KLoop(KTerm):
    body: KTerm


@dataclass(frozen=True)
class KAbort(KTerm):
    body: KTerm
    cond: KExpr
    label: str
    weak: bool = False
    immediate: bool = False


@dataclass(frozen=True)
class KCheckAbort(KTerm):
    cond: KExpr
    label: str


def kseq(stmts: list[KTerm]) -> KTerm:
    """Right-fold a statement list, dropping nothing units."""
    live = [s for s in stmts if not isinstance(s, KNothing)]
    if not live:
        return NOTHING
    out = live[-1]
    for s in reversed(live[:-1]):
        out = KSeq(s, out)
    return out


def seq_iter(term: KTerm) -> Iterator[KTerm]:
    while isinstance(term, KSeq):
        yield term.head
        term = term.tail
    yield term


# ------------------------------------------------------------------ analysis


def syncs_on_all_paths(term: KTerm) -> bool:
    """True when every way through one execution of `term` crosses a sync."""
    if isinstance(term, KSync):
        return True
    if isinstance(term, KSeq):
        return syncs_on_all_paths(term.head) or syncs_on_all_paths(term.tail)
    if isinstance(term, KIf):
        return syncs_on_all_paths(term.then) and syncs_on_all_paths(term.els)
    if isinstance(term, KLoop):
        # a loop iteration cannot complete without passing its own syncs
        return True
    if isinstance(term, KAbort):
        return syncs_on_all_paths(term.body)
    return False


def check_loops(term: KTerm, thread: str) -> None:
    """Reject loops that admit a sync-free iteration (they never yield)."""
    if isinstance(term, KLoop):
        if not syncs_on_all_paths(term.body):
            raise LoweringError(
                f"thread {thread!r} has a loop with a sync-free path; "
                "every iteration must advance the clock"
            )
        check_loops(term.body, thread)
    elif isinstance(term, KSeq):
        check_loops(term.head, thread)
        check_loops(term.tail, thread)
    elif isinstance(term, KIf):
        check_loops(term.then, thread)
        check_loops(term.els, thread)
    elif isinstance(term, KAbort):
        check_loops(term.body, thread)


def sync_amounts(term: KTerm) -> list[int]:
    out: list[int] = []

    def walk(t: KTerm) -> None:
        if isinstance(t, KSync):
            out.append(t.amount)
        elif isinstance(t, KSeq):
            walk(t.head)
            walk(t.tail)
        elif isinstance(t, KIf):
            walk(t.then)
            walk(t.els)
        elif isinstance(t, (KLoop, KAbort)):
            walk(t.body)

    walk(term)
    return out


def channels_in_expr(e: KExpr) -> Iterator[tuple[str, str]]:
    if isinstance(e, KRead):
        yield ("read", e.chan)
    elif isinstance(e, KFresh):
        yield ("fresh", e.chan)
    elif isinstance(e, KUnary):
        yield from channels_in_expr(e.operand)
    elif isinstance(e, KBinary):
        yield from channels_in_expr(e.left)
        yield from channels_in_expr(e.right)
    elif isinstance(e, KCall):
        for a in e.args:
            yield from channels_in_expr(a)


def channels_used(term: KTerm) -> Iterator[tuple[str, str]]:
    """Yield ("read"|"fresh"|"send", channel) pairs in syntactic order."""
    if isinstance(term, KAssign):
        yield from channels_in_expr(term.value)
    elif isinstance(term, KExprStmt):
        yield from channels_in_expr(term.expr)
    elif isinstance(term, KSend):
        yield from channels_in_expr(term.value)
        yield ("send", term.chan)
    elif isinstance(term, KIf):
        yield from channels_in_expr(term.cond)
        yield from channels_used(term.then)
        yield from channels_used(term.els)
    elif isinstance(term, KSeq):
        yield from channels_used(term.head)
        yield from channels_used(term.tail)
    elif isinstance(term, (KLoop,)):
        yield from channels_used(term.body)
    elif isinstance(term, KAbort):
        yield from channels_in_expr(term.cond)
        yield from channels_used(term.body)
    elif isinstance(term, KCheckAbort):
        yield from channels_in_expr(term.cond)


# ------------------------------------------------------------------- program


@dataclass(frozen=True)
class MuxSpec:
    """Slot ownership for a channel written by staggered task replicas.

    The writer whose clock n satisfies n mod cycle == residue owns the
    frame pushed at n; other writers must push empty frames at that slot.
    Slots whose residue is unowned always carry an empty frame.
    """

    cycle: int
    residue_writer: tuple[tuple[int, str], ...]

    def owner(self, sender_slot: int) -> Optional[str]:
        r = sender_slot % self.cycle
        for residue, writer in self.residue_writer:
            if r == residue:
                return writer
        return None


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    delta: int
    elem_type: str
    writers: tuple[str, ...]
    readers: tuple[str, ...]
    init: Value = EMPTY
    mux: Optional[MuxSpec] = None

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise LoweringError(f"channel {self.name!r} has negative delay {self.delta}")


@dataclass(frozen=True)
class TaskMeta:
    thread: str
    period: int
    duration: int
    offset: int
    duration_sync_uid: int


@dataclass
class KernelProgram:
    threads: dict[str, KTerm]
    channels: dict[str, ChannelSpec]
    tasks: tuple[TaskMeta, ...] = ()

    def inbound(self, thread: str) -> list[ChannelSpec]:
        return [c for c in self.channels.values() if thread in c.readers]

    def outbound(self, thread: str) -> list[ChannelSpec]:
        return [c for c in self.channels.values() if thread in c.writers]

    def duration_uids(self, thread: str) -> frozenset[int]:
        return frozenset(t.duration_sync_uid for t in self.tasks if t.thread == thread)

    def validate_topology(self) -> None:
        for term, name in ((t, n) for n, t in self.threads.items()):
            check_loops(term, name)
        for spec in self.channels.values():
            for t in (*spec.writers, *spec.readers):
                if t not in self.threads:
                    raise LoweringError(
                        f"channel {spec.name!r} references unknown thread {t!r}"
                    )


# ---------------------------------------------------------------- text form

EMIT_HEADER = "timetide-kernel v1"


def _expr_text(e: KExpr) -> str:
    if isinstance(e, KInt):
        return str(e.value)
    if isinstance(e, KFloat):
        return repr(e.value)
    if isinstance(e, KBool):
        return "true" if e.value else "false"
    if isinstance(e, KVar):
        return e.name
    if isinstance(e, KRead):
        return f"read({e.chan})"
    if isinstance(e, KFresh):
        return f"fresh({e.chan})"
    if isinstance(e, KUnary):
        return f"{e.op}({_expr_text(e.operand)})"
    if isinstance(e, KBinary):
        return f"({_expr_text(e.left)} {e.op} {_expr_text(e.right)})"
    if isinstance(e, KCall):
        return f"{e.func}({', '.join(_expr_text(a) for a in e.args)})"
    raise LoweringError(f"unprintable kernel expression {e!r}")


def _term_lines(t: KTerm, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    if isinstance(t, KNothing):
        out.append(pad + "nothing")
    elif isinstance(t, KVarDecl):
        out.append(pad + f"var {t.name}")
    elif isinstance(t, KAssign):
        out.append(pad + f"{t.name} = {_expr_text(t.value)}")
    elif isinstance(t, KExprStmt):
        out.append(pad + f"eval {_expr_text(t.expr)}")
    elif isinstance(t, KSend):
        out.append(pad + f"send {t.chan}({_expr_text(t.value)})")
    elif isinstance(t, KSync):
        out.append(pad + f"sync {t.amount}")
    elif isinstance(t, KIf):
        out.append(pad + f"if {_expr_text(t.cond)}")
        _term_lines(t.then, indent + 1, out)
        if not isinstance(t.els, KNothing):
            out.append(pad + "else")
            _term_lines(t.els, indent + 1, out)
        out.append(pad + "end if")
    elif isinstance(t, KSeq):
        for part in seq_iter(t):
            _term_lines(part, indent, out)
    elif isinstance(t, KLoop):
        out.append(pad + "loop")
        _term_lines(t.body, indent + 1, out)
        out.append(pad + "end loop")
    elif isinstance(t, KAbort):
        kind = "weak abort" if t.weak else "abort"
        imm = " immediate" if t.immediate else ""
        out.append(pad + f"{kind} {t.label}{imm} when {_expr_text(t.cond)}")
        _term_lines(t.body, indent + 1, out)
        out.append(pad + "end abort")
    elif isinstance(t, KCheckAbort):
        out.append(pad + f"checkabort({_expr_text(t.cond)}, {t.label})")
    else:
        raise LoweringError(f"unprintable kernel term {t!r}")


def emit_kernel(program: KernelProgram) -> str:
    lines = [EMIT_HEADER]
    for spec in program.channels.values():
        init = "" if spec.init is EMPTY else f" init={spec.init!r}"
        mux = ""
        if spec.mux is not None:
            owners = ",".join(f"{r}:{w}" for r, w in spec.mux.residue_writer)
            mux = f" mux[{spec.mux.cycle}]({owners})"
        lines.append(
            f"channel {spec.name} : {spec.elem_type} delay {spec.delta} "
            f"writers={','.join(spec.writers)} readers={','.join(spec.readers)}"
            f"{init}{mux}"
        )
    for meta in program.tasks:
        lines.append(
            f"task {meta.thread} period={meta.period} duration={meta.duration} "
            f"offset={meta.offset}"
        )
    for name, term in program.threads.items():
        lines.append(f"thread {name}:")
        _term_lines(term, 1, lines)
    return "\n".join(lines) + "\n"


KernelNode = Union[KTerm, KExpr]
