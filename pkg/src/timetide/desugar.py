"""Lowering from the surface tree to kernel programs.

Stages, in order:
  1. module instantiation: `run` sites are inlined with ports substituted
  2. iterator unrolling: foreach becomes a sequence, pareach parallel arms
  3. thread splitting: every `<>` arm becomes a named thread
  4. task lowering: tasks become sync/latch/body loops (replicated when the
     duration exceeds the period)
  5. checkabort insertion for aborts, outermost checked first

Thread names are dotted instance paths ("Trader.1", "Agg.0.Leaf.2"); channel
ids are the declaring instance's path plus the element suffix ("orders.0").
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace as dc_replace
from typing import Mapping, Optional, Sequence

from . import kernel as k
from .diagnostics import LoweringError, ValidationError, Diagnostic
from .surface import ast
from .surface.resolve import (
    eval_const_expr,
    fold_expr,
    fold_stmt,
    literal_for,
    module_const_env,
    resolve_constants,
)
from .values import EMPTY, Value


# ----------------------------------------------------------- channel registry


@dataclass
class ChannelInfo:
    base: str
    elem_type: str
    delta: int
    size: Optional[int]
    init: Value = EMPTY

    def element_ids(self) -> list[str]:
        if self.size is None:
            return [self.base]
        return [f"{self.base}.{i}" for i in range(self.size)]


class Registry:
    """Channels and threads discovered while walking the program."""

    def __init__(self) -> None:
        self.channels: dict[str, ChannelInfo] = {}
        self.order: list[str] = []

    def lookup(self, ident: str) -> Optional[tuple[ChannelInfo, Optional[int]]]:
        """Resolve a name to (info, element index). Scalars give index None."""
        info = self.channels.get(ident)
        if info is not None:
            return info, None
        base, dot, tail = ident.rpartition(".")
        if dot and tail.isdigit():
            info = self.channels.get(base)
            if info is not None and info.size is not None and int(tail) < info.size:
                return info, int(tail)
        return None

    def declare(self, decl: ast.ChannelDecl, prefix: str) -> ChannelInfo:
        base = f"{prefix}.{decl.name}" if prefix else decl.name
        if base in self.channels:
            raise LoweringError(f"channel {base!r} declared twice", decl.span)
        delta = eval_const_expr(decl.delay)
        if not isinstance(delta, int) or isinstance(delta, bool) or delta < 0:
            raise LoweringError(
                f"channel {base!r} delay must be a non-negative constant", decl.span
            )
        size = None
        if decl.type.size is not None:
            size = eval_const_expr(decl.type.size)
            if not isinstance(size, int) or size < 1:
                raise LoweringError(
                    f"channel {base!r} array size must be a positive constant", decl.span
                )
        init: Value = EMPTY
        if decl.init is not None:
            init = eval_const_expr(decl.init)
            if init is None:
                raise LoweringError(f"channel {base!r} initial value must be constant", decl.span)
        info = ChannelInfo(base, decl.type.base, delta, size, init)
        self.channels[base] = info
        self.order.append(base)
        return info


# ----------------------------------------------------- instantiation (pass 1)


def _rename_expr(e: ast.Expr, chans: Mapping[str, str]) -> ast.Expr:
    if isinstance(e, ast.Name):
        if e.ident in chans:
            return ast.Name(chans[e.ident], e.span)
        return e
    if isinstance(e, (ast.IntLit, ast.FloatLit, ast.BoolLit)):
        return e
    if isinstance(e, ast.Index):
        return ast.Index(_rename_expr(e.base, chans), _rename_expr(e.index, chans), e.span)
    if isinstance(e, ast.Unary):
        return ast.Unary(e.op, _rename_expr(e.operand, chans), e.span)
    if isinstance(e, ast.Binary):
        return ast.Binary(e.op, _rename_expr(e.left, chans), _rename_expr(e.right, chans), e.span)
    if isinstance(e, ast.Call):
        return ast.Call(e.func, tuple(_rename_expr(a, chans) for a in e.args), e.span)
    if isinstance(e, ast.Fresh):
        return ast.Fresh(_rename_expr(e.chan, chans), e.span)
    raise LoweringError(f"cannot rename expression {e!r}", getattr(e, "span", None))


def _rename_stmt(s: ast.Stmt, chans: Mapping[str, str]) -> ast.Stmt:
    """Rewrite channel references to their global ids."""
    if isinstance(s, ast.Skip):
        return s
    if isinstance(s, ast.Seq):
        return ast.Seq(tuple(_rename_stmt(x, chans) for x in s.stmts), s.span)
    if isinstance(s, ast.Par):
        return ast.Par(_rename_stmt(s.left, chans), _rename_stmt(s.right, chans), s.span)
    if isinstance(s, ast.Run):
        bindings = tuple(
            ast.Binding(_rename_expr(b.value, chans), b.port, b.span) for b in s.bindings
        )
        return ast.Run(s.module, bindings, s.span)
    if isinstance(s, ast.Iterate):
        return ast.Iterate(s.parallel, s.var, s.bound, _rename_stmt(s.body, chans), s.span)
    if isinstance(s, ast.VarBlock):
        init = _rename_expr(s.init, chans) if s.init is not None else None
        return ast.VarBlock(s.name, s.type, init, _rename_stmt(s.body, chans), s.span)
    if isinstance(s, ast.ConstDecl):
        return s
    if isinstance(s, ast.ChanBlock):
        return ast.ChanBlock(s.channels, _rename_stmt(s.body, chans), s.span)
    if isinstance(s, ast.Task):
        return ast.Task(s.period, s.duration, s.offset, _rename_stmt(s.body, chans), s.span)
    if isinstance(s, ast.Abort):
        return ast.Abort(
            _rename_stmt(s.body, chans), _rename_expr(s.cond, chans), s.weak, s.immediate, s.span
        )
    if isinstance(s, ast.Assign):
        return ast.Assign(s.target, _rename_expr(s.value, chans), s.span)
    if isinstance(s, ast.If):
        els = _rename_stmt(s.els, chans) if s.els is not None else None
        return ast.If(_rename_expr(s.cond, chans), _rename_stmt(s.then, chans), els, s.span)
    if isinstance(s, ast.Send):
        return ast.Send(_rename_expr(s.chan, chans), _rename_expr(s.value, chans), s.span)
    if isinstance(s, ast.ExprStmt):
        return ast.ExprStmt(_rename_expr(s.expr, chans), s.span)
    raise LoweringError(f"cannot rename statement {type(s).__name__}", getattr(s, "span", None))


@dataclass
class Named:
    """Marker wrapping a module instance's inlined body with its path name."""

    name: str
    body: ast.Stmt


class Instantiator:
    """Inline run sites, expand iterators, register channels by global id.

    Parallel iteration arms contribute a dotted index suffix to the names
    of instances they contain ("Trader.1"). Instance bodies come back
    wrapped in Named markers so thread splitting can recover their paths.
    """

    def __init__(self, program: ast.SurfaceProgram, registry: Registry) -> None:
        self.program = program
        self.registry = registry

    def entry_body(self):
        entry = self.program.module(self.program.entry)
        if entry is None:
            raise LoweringError(f"entry module {self.program.entry!r} not found")
        for decl in entry.channels:
            self.registry.declare(decl, "")
        return self._inline(entry.body, prefix="", stack=(entry.name,), pending=(), leaf=False)

    def _inline(self, s, prefix: str, stack: tuple[str, ...], pending: tuple[int, ...], leaf: bool):
        if isinstance(s, ast.Seq):
            return ast.Seq(
                tuple(self._inline(x, prefix, stack, pending, leaf) for x in s.stmts), s.span
            )
        if isinstance(s, ast.Par):
            if leaf:
                raise LoweringError("parallel arms cannot appear inside this block", s.span)
            return ast.Par(
                self._inline(s.left, prefix, stack, pending, leaf),
                self._inline(s.right, prefix, stack, pending, leaf),
                s.span,
            )
        if isinstance(s, ast.Iterate):
            if s.parallel and leaf:
                raise LoweringError("pareach cannot appear inside this block", s.span)
            bound = eval_const_expr(s.bound)
            if not isinstance(bound, int) or isinstance(bound, bool) or bound < 0:
                raise LoweringError(
                    "iteration bound must be a constant non-negative integer", s.span
                )
            arms = []
            for j in range(bound):
                body = fold_stmt(s.body, {s.var: j})
                sub = pending + (j,) if s.parallel else pending
                arms.append(self._inline(body, prefix, stack, sub, leaf))
            if not arms:
                return ast.Skip(s.span)
            if s.parallel:
                out = arms[-1]
                for arm in reversed(arms[:-1]):
                    out = ast.Par(arm, out, s.span)
                return out
            return ast.Seq(tuple(arms), s.span)
        if isinstance(s, ast.ChanBlock):
            if leaf:
                raise LoweringError("channel blocks cannot appear inside this block", s.span)
            renames = {}
            for decl in s.channels:
                info = self.registry.declare(decl, prefix)
                renames[decl.name] = info.base
            body = _rename_stmt(s.body, renames)
            return self._inline(body, prefix, stack, pending, leaf)
        if isinstance(s, ast.Run):
            if leaf:
                raise LoweringError("run cannot appear inside this block", s.span)
            return self._inline_run(s, prefix, stack, pending)
        if isinstance(s, ast.VarBlock):
            return ast.VarBlock(
                s.name, s.type, s.init, self._inline(s.body, prefix, stack, pending, True), s.span
            )
        if isinstance(s, ast.Task):
            return ast.Task(
                s.period,
                s.duration,
                s.offset,
                self._inline(s.body, prefix, stack, pending, True),
                s.span,
            )
        if isinstance(s, ast.Abort):
            return ast.Abort(
                self._inline(s.body, prefix, stack, pending, True), s.cond, s.weak, s.immediate, s.span
            )
        if isinstance(s, ast.If):
            els = self._inline(s.els, prefix, stack, pending, True) if s.els is not None else None
            return ast.If(s.cond, self._inline(s.then, prefix, stack, pending, True), els, s.span)
        return s

    def _inline_run(
        self, s: ast.Run, prefix: str, stack: tuple[str, ...], pending: tuple[int, ...]
    ):
        target = self.program.module(s.module)
        if target is None:
            raise LoweringError(f"run of unknown module {s.module!r}", s.span)
        if s.module in stack:
            cycle = " -> ".join(stack + (s.module,))
            raise LoweringError(f"recursive module instantiation: {cycle}", s.span)

        instance = f"{prefix}.{s.module}" if prefix else s.module
        instance += "".join(f".{i}" for i in pending)

        ports = list(target.ports)
        const_env: dict[str, object] = {}
        chan_renames: dict[str, str] = {}
        positional = 0
        bound: set[str] = set()
        for b in s.bindings:
            if b.port is not None:
                port = target.port(b.port)
                if port is None:
                    raise LoweringError(f"module {target.name!r} has no port {b.port!r}", b.span)
            else:
                if positional >= len(ports):
                    raise LoweringError(f"too many bindings for {target.name!r}", b.span)
                port = ports[positional]
                positional += 1
            if port.name in bound:
                raise LoweringError(f"port {port.name!r} bound twice", b.span)
            bound.add(port.name)
            if port.is_const:
                value = eval_const_expr(b.value)
                if value is None:
                    raise LoweringError(
                        f"const port {port.name!r} needs a constant value", b.span
                    )
                const_env[port.name] = value
            else:
                chan_renames[port.name] = self._channel_id(b.value, port, b.span)
        for port in ports:
            if port.name in bound:
                continue
            if port.is_const and port.init is not None:
                value = eval_const_expr(port.init)
                if value is None:
                    raise LoweringError(
                        f"default for const port {port.name!r} must be literal", port.span
                    )
                const_env[port.name] = value
            else:
                raise LoweringError(
                    f"run of {target.name!r} leaves port {port.name!r} unbound", s.span
                )

        env = module_const_env(target, const_env)
        body = fold_stmt(target.body, env)
        for decl in target.channels:
            folded = dc_replace(
                decl,
                type=ast.TypeRef(
                    decl.type.base,
                    fold_expr(decl.type.size, env) if decl.type.size is not None else None,
                    decl.type.span,
                ),
                delay=fold_expr(decl.delay, env),
                init=fold_expr(decl.init, env) if decl.init is not None else None,
            )
            info = self.registry.declare(folded, instance)
            chan_renames[decl.name] = info.base
        # port defaults may seed a bound channel's initial value
        for port in ports:
            if port.is_const or port.init is None:
                continue
            value = eval_const_expr(fold_expr(port.init, env))
            cid = chan_renames.get(port.name)
            if value is not None and cid is not None:
                info = self.registry.channels.get(cid)
                if info is not None and info.size is None and info.init is EMPTY:
                    info.init = value
        body = _rename_stmt(body, chan_renames)
        inlined = self._inline(body, instance, stack + (s.module,), (), False)
        return Named(instance, inlined)

    def _channel_id(self, value: ast.Expr, port: ast.PortDecl, span) -> str:
        if isinstance(value, ast.Name):
            return value.ident
        if isinstance(value, ast.Index) and isinstance(value.base, ast.Name):
            idx = eval_const_expr(value.index)
            if not isinstance(idx, int):
                raise LoweringError(
                    f"channel element binding for {port.name!r} needs a constant index", span
                )
            return f"{value.base.ident}.{idx}"
        raise LoweringError(f"port {port.name!r} must be bound to a channel", span)


# --------------------------------------------------- thread splitting (pass 2)


@dataclass
class RawThread:
    name: str
    body: ast.Stmt


def split_threads(body, parent: str) -> list[RawThread]:
    """Split an instantiated body into leaf threads at `<>` boundaries.

    A leaf gets its instance path as its name when that path is unambiguous,
    otherwise an .arm<k> suffix. A Named marker over a single leaf names it;
    over several, it prefixes their fallback names.
    """
    found: list[tuple[str, ast.Stmt]] = []

    def forks(s) -> bool:
        if isinstance(s, ast.Par):
            return True
        if isinstance(s, Named):
            return forks(s.body)
        if isinstance(s, ast.Seq):
            return any(forks(x) for x in s.stmts)
        return False

    def walk(s, hint: str) -> None:
        if isinstance(s, Named):
            walk(s.body, s.name)
            return
        if isinstance(s, ast.Par):
            walk(s.left, hint)
            walk(s.right, hint)
            return
        if isinstance(s, ast.Seq):
            live = [x for x in s.stmts if not isinstance(x, (ast.Skip, ast.ConstDecl))]
            if len(live) == 1:
                walk(live[0], hint)
                return
            if any(forks(x) for x in live):
                raise LoweringError(
                    "parallel arms cannot be sequenced with other statements", s.span
                )
            # runs inlined mid-sequence without forks stay in this thread
        found.append((hint, s))

    walk(body, parent)
    counts: dict[str, int] = {}
    for hint, _ in found:
        counts[hint] = counts.get(hint, 0) + 1
    seen: dict[str, int] = {}
    out: list[RawThread] = []
    for hint, leaf in found:
        if counts[hint] == 1:
            out.append(RawThread(hint, leaf))
        else:
            n = seen.get(hint, 0)
            seen[hint] = n + 1
            out.append(RawThread(f"{hint}.arm{n}", leaf))
    return out


# ------------------------------------------------------------- spec-level ops


def instantiate_modules(
    program: ast.SurfaceProgram, entry_args: Optional[Mapping[str, object]] = None
) -> ast.SurfaceProgram:
    """Inline every run site; the result holds a single entry module."""
    resolved = resolve_constants(program, entry_args)
    registry = Registry()
    body = _strip_named(Instantiator(resolved, registry).entry_body())
    entry = resolved.module(resolved.entry)
    assert entry is not None
    channels = tuple(
        ast.ChannelDecl(
            info.base,
            ast.TypeRef(
                info.elem_type,
                ast.IntLit(info.size) if info.size is not None else None,
            ),
            ast.IntLit(info.delta),
            None if info.init is EMPTY else literal_for(info.init, ast.NO_SPAN),
        )
        for info in (registry.channels[n] for n in registry.order)
    )
    module = ast.ModuleDecl(entry.name, (), (), channels, body, entry.span)
    return ast.SurfaceProgram((module,), entry.name, program.filename, program.taps)


def _strip_named(s):
    if isinstance(s, Named):
        return _strip_named(s.body)
    if isinstance(s, ast.Seq):
        return ast.Seq(tuple(_strip_named(x) for x in s.stmts), s.span)
    if isinstance(s, ast.Par):
        return ast.Par(_strip_named(s.left), _strip_named(s.right), s.span)
    return s


def unroll_iterators(program: ast.SurfaceProgram) -> ast.SurfaceProgram:
    """Expand foreach into sequences and pareach into parallel arms.

    Bounds must already be literal, so resolve constants first. Modules
    whose bounds come from const ports are expanded at instantiation time
    instead.
    """

    def unroll(s: ast.Stmt) -> ast.Stmt:
        if isinstance(s, ast.Iterate):
            bound = eval_const_expr(s.bound)
            if not isinstance(bound, int) or isinstance(bound, bool) or bound < 0:
                return ast.Iterate(s.parallel, s.var, s.bound, unroll(s.body), s.span)
            arms: list[ast.Stmt] = []
            for j in range(bound):
                arms.append(unroll(fold_stmt(s.body, {s.var: j})))
            if not arms:
                return ast.Skip(s.span)
            if s.parallel:
                out = arms[-1]
                for arm in reversed(arms[:-1]):
                    out = ast.Par(arm, out, s.span)
                return out
            return ast.Seq(tuple(arms), s.span)
        if isinstance(s, ast.Seq):
            return ast.Seq(tuple(unroll(x) for x in s.stmts), s.span)
        if isinstance(s, ast.Par):
            return ast.Par(unroll(s.left), unroll(s.right), s.span)
        if isinstance(s, ast.VarBlock):
            return ast.VarBlock(s.name, s.type, s.init, unroll(s.body), s.span)
        if isinstance(s, ast.ChanBlock):
            return ast.ChanBlock(s.channels, unroll(s.body), s.span)
        if isinstance(s, ast.Task):
            return ast.Task(s.period, s.duration, s.offset, unroll(s.body), s.span)
        if isinstance(s, ast.Abort):
            return ast.Abort(unroll(s.body), s.cond, s.weak, s.immediate, s.span)
        if isinstance(s, ast.If):
            els = unroll(s.els) if s.els is not None else None
            return ast.If(s.cond, unroll(s.then), els, s.span)
        return s

    modules = tuple(
        ast.ModuleDecl(m.name, m.ports, m.consts, m.channels, unroll(m.body), m.span)
        for m in program.modules
    )
    return ast.SurfaceProgram(modules, program.entry, program.filename, program.taps)


@dataclass(frozen=True)
class TaskParams:
    period: int
    duration: int
    offset: int = 0


def lower_task(
    params: TaskParams,
    body: k.KTerm,
    inputs: Optional[Sequence[str]] = None,
    allow_wrap: bool = False,
) -> tuple[k.KTerm, int]:
    """Build the sync/latch/body loop for one task.

    Returns the term and the uid of the duration sync (the tick at which a
    body execution becomes observable). Offsets beyond one period become a
    one-time sync prefix before the loop.
    """
    p, d, o = params.period, params.duration, params.offset
    if p < 1 or d < 1 or o < 0:
        raise LoweringError(f"bad task parameters period={p} duration={d} offset={o}")
    if d > p and not allow_wrap:
        raise LoweringError(
            f"task duration {d} exceeds period {p}; replicate it first"
        )
    o_pre = (o // p) * p
    o_in = o % p
    wrap = o_in + d > p
    if wrap and not allow_wrap:
        raise LoweringError(
            f"task window offset {o} mod period {p} plus duration {d} crosses "
            "the period boundary"
        )

    latches, body = _latch_inputs(body, inputs)
    dur = k.KSync(d)
    if wrap:
        # whole offset hoisted out; the loop runs duration then the remainder
        prefix = o
        parts = [*latches, dur, body, k.KSync(p - d)] if p - d > 0 else [*latches, dur, body]
    else:
        prefix = o_pre
        parts = []
        if o_in > 0:
            parts.append(k.KSync(o_in))
        parts.extend(latches)
        parts.append(dur)
        parts.append(body)
        if p - d - o_in > 0:
            parts.append(k.KSync(p - d - o_in))
    loop = k.KLoop(k.kseq(parts))
    term = k.kseq([k.KSync(prefix), loop]) if prefix > 0 else loop
    return term, dur.uid


def _latch_inputs(
    body: k.KTerm, inputs: Optional[Sequence[str]]
) -> tuple[list[k.KTerm], k.KTerm]:
    reads: list[str] = []
    freshes: list[str] = []
    order: list[str] = []
    for kind, chan in k.channels_used(body):
        if kind == "send":
            continue
        if chan not in order:
            order.append(chan)
        if kind == "read" and chan not in reads:
            reads.append(chan)
        if kind == "fresh" and chan not in freshes:
            freshes.append(chan)
    if inputs is not None:
        order = [c for c in inputs if c in order] + [c for c in order if c not in inputs]

    latches: list[k.KTerm] = []
    value_map: dict[str, str] = {}
    fresh_map: dict[str, str] = {}
    for chan in order:
        if chan in freshes:
            name = f"latchf_{chan}"
            fresh_map[chan] = name
            latches.append(k.KAssign(name, k.KFresh(chan)))
        if chan in reads:
            name = f"latch_{chan}"
            value_map[chan] = name
            latches.append(k.KAssign(name, k.KRead(chan)))
    if not latches:
        return [], body
    return latches, _redirect(body, value_map, fresh_map)


def _redirect_expr(e: k.KExpr, values: Mapping[str, str], freshes: Mapping[str, str]) -> k.KExpr:
    if isinstance(e, k.KRead) and e.chan in values:
        return k.KVar(values[e.chan])
    if isinstance(e, k.KFresh) and e.chan in freshes:
        return k.KVar(freshes[e.chan])
    if isinstance(e, k.KUnary):
        return k.KUnary(e.op, _redirect_expr(e.operand, values, freshes))
    if isinstance(e, k.KBinary):
        return k.KBinary(
            e.op,
            _redirect_expr(e.left, values, freshes),
            _redirect_expr(e.right, values, freshes),
        )
    if isinstance(e, k.KCall):
        return k.KCall(e.func, tuple(_redirect_expr(a, values, freshes) for a in e.args))
    return e


def _redirect(t: k.KTerm, values: Mapping[str, str], freshes: Mapping[str, str]) -> k.KTerm:
    if isinstance(t, k.KAssign):
        return k.KAssign(t.name, _redirect_expr(t.value, values, freshes))
    if isinstance(t, k.KExprStmt):
        return k.KExprStmt(_redirect_expr(t.expr, values, freshes))
    if isinstance(t, k.KSend):
        return k.KSend(t.chan, _redirect_expr(t.value, values, freshes))
    if isinstance(t, k.KIf):
        return k.KIf(
            _redirect_expr(t.cond, values, freshes),
            _redirect(t.then, values, freshes),
            _redirect(t.els, values, freshes),
        )
    if isinstance(t, k.KSeq):
        return k.KSeq(_redirect(t.head, values, freshes), _redirect(t.tail, values, freshes))
    if isinstance(t, k.KLoop):
        return k.KLoop(_redirect(t.body, values, freshes))
    if isinstance(t, k.KAbort):
        return k.KAbort(
            _redirect(t.body, values, freshes),
            _redirect_expr(t.cond, values, freshes),
            t.label,
            t.weak,
            t.immediate,
        )
    if isinstance(t, k.KCheckAbort):
        return k.KCheckAbort(_redirect_expr(t.cond, values, freshes), t.label)
    return t


def pipeline_task(
    params: TaskParams, body: k.KTerm, inputs: Optional[Sequence[str]] = None
) -> list[tuple[TaskParams, k.KTerm, int]]:
    """Replicate a long task into staggered copies, one body per period.

    Returns (params, term, duration_sync_uid) per replica. Tasks whose
    duration fits the period come back as a single unreplicated entry.
    """
    p, d, o = params.period, params.duration, params.offset
    if d <= p:
        term, uid = lower_task(params, body, inputs)
        return [(params, term, uid)]
    cycle = math.lcm(d, p)
    copies = cycle // p
    out: list[tuple[TaskParams, k.KTerm, int]] = []
    for j in range(copies):
        rp = TaskParams(cycle, d, o + j * p)
        term, uid = lower_task(rp, _refresh_uids(body), inputs, allow_wrap=True)
        out.append((rp, term, uid))
    return out


def _refresh_uids(t: k.KTerm) -> k.KTerm:
    """Copy a term so each replica owns distinct sync identities."""
    if isinstance(t, k.KSync):
        return k.KSync(t.amount)
    if isinstance(t, k.KSeq):
        return k.KSeq(_refresh_uids(t.head), _refresh_uids(t.tail))
    if isinstance(t, k.KIf):
        return k.KIf(t.cond, _refresh_uids(t.then), _refresh_uids(t.els))
    if isinstance(t, k.KLoop):
        return k.KLoop(_refresh_uids(t.body))
    if isinstance(t, k.KAbort):
        return k.KAbort(_refresh_uids(t.body), t.cond, t.label, t.weak, t.immediate)
    return t


# --------------------------------------------------------- checkabort insertion


def insert_checkaborts(term: k.KTerm) -> k.KTerm:
    """Weave checkabort statements for every abort, innermost first.

    Strong aborts check right after every sync; weak aborts check right
    before every sync except the first. Immediate variants also check at
    the head of the body. Outer aborts' checks are placed so they run
    before inner ones.
    """
    if isinstance(t := term, k.KSeq):
        return k.KSeq(insert_checkaborts(t.head), insert_checkaborts(t.tail))
    if isinstance(term, k.KIf):
        return k.KIf(term.cond, insert_checkaborts(term.then), insert_checkaborts(term.els))
    if isinstance(term, k.KLoop):
        return k.KLoop(insert_checkaborts(term.body))
    if isinstance(term, k.KAbort):
        inner = insert_checkaborts(term.body)
        check = k.KCheckAbort(term.cond, term.label)
        if term.weak:
            state = {"seen": term.immediate}
            woven = _weave_weak(inner, check, state)
        else:
            woven = _weave_strong(inner, check)
            if term.immediate:
                woven = k.KSeq(check, woven)
        return k.KAbort(woven, term.cond, term.label, term.weak, term.immediate)
    return term


def _flatten(t: k.KTerm) -> list[k.KTerm]:
    """Fully flatten a seq spine, including seqs nested in head position."""
    if isinstance(t, k.KSeq):
        return _flatten(t.head) + _flatten(t.tail)
    if isinstance(t, k.KNothing):
        return []
    return [t]


def _weave_strong(t: k.KTerm, check: k.KCheckAbort) -> k.KTerm:
    """Insert `check` immediately after each sync, ahead of inner checks."""
    out: list[k.KTerm] = []
    for item in _flatten(t):
        if isinstance(item, k.KSync):
            out.append(item)
            out.append(check)
        elif isinstance(item, k.KIf):
            out.append(
                k.KIf(item.cond, _weave_strong(item.then, check), _weave_strong(item.els, check))
            )
        elif isinstance(item, k.KLoop):
            out.append(k.KLoop(_weave_strong(item.body, check)))
        elif isinstance(item, k.KAbort):
            out.append(
                k.KAbort(
                    _weave_strong(item.body, check),
                    item.cond,
                    item.label,
                    item.weak,
                    item.immediate,
                )
            )
        else:
            out.append(item)
    return k.kseq(out)


def _weave_weak(t: k.KTerm, check: k.KCheckAbort, state: dict) -> k.KTerm:
    """Insert `check` before each sync except the first one seen.

    Checks land ahead of any checkabort cluster already sitting before the
    sync, so the outermost abort is always the first one tested.
    """
    out: list[k.KTerm] = []
    for item in _flatten(t):
        if isinstance(item, k.KSync):
            if not state["seen"]:
                state["seen"] = True
                out.append(item)
                continue
            at = len(out)
            while at > 0 and isinstance(out[at - 1], k.KCheckAbort):
                at -= 1
            out.insert(at, check)
            out.append(item)
        elif isinstance(item, k.KIf):
            out.append(
                k.KIf(
                    item.cond,
                    _weave_weak(item.then, check, state),
                    _weave_weak(item.els, check, state),
                )
            )
        elif isinstance(item, k.KLoop):
            out.append(k.KLoop(_weave_weak(item.body, check, state)))
        elif isinstance(item, k.KAbort):
            out.append(
                k.KAbort(
                    _weave_weak(item.body, check, state),
                    item.cond,
                    item.label,
                    item.weak,
                    item.immediate,
                )
            )
        else:
            out.append(item)
    return k.kseq(out)


# ------------------------------------------------------- kernel construction


class ThreadBuilder:
    """Convert one leaf thread's surface body into a kernel term."""

    def __init__(self, name: str, ctx: "_ProgramContext") -> None:
        self.name = name
        self.ctx = ctx
        self.scopes: list[dict[str, str]] = [{}]
        self.allocated: set[str] = set()
        self.tasks: list[k.TaskMeta] = []
        self.pipeline_outputs: list[str] = []

    # -- variables

    def _alloc(self, name: str) -> str:
        base = name
        if base.startswith(("latch_", "latchf_")):
            base += "$u"
        out = base
        n = 1
        while out in self.allocated:
            out = f"{base}${n}"
            n += 1
        self.allocated.add(out)
        self.scopes[-1][name] = out
        return out

    def _lookup(self, name: str) -> Optional[str]:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return None

    # -- channels

    def _channel_id(self, e: ast.Expr, use: str) -> str:
        reg = self.ctx.registry
        if isinstance(e, ast.Name):
            hit = reg.lookup(e.ident)
            if hit is None:
                raise LoweringError(f"unknown channel {e.ident!r}", e.span)
            info, idx = hit
            if idx is None and info.size is not None:
                raise LoweringError(
                    f"channel array {e.ident!r} needs an element index", e.span
                )
            return e.ident
        if isinstance(e, ast.Index) and isinstance(e.base, ast.Name):
            hit = reg.lookup(e.base.ident)
            if hit is None or hit[0].size is None or hit[1] is not None:
                raise LoweringError(f"unknown channel array {e.base.ident!r}", e.span)
            info = hit[0]
            idx = eval_const_expr(e.index)
            if not isinstance(idx, int) or isinstance(idx, bool):
                raise LoweringError(
                    f"element index of {e.base.ident!r} must be constant", e.span
                )
            if not 0 <= idx < info.size:
                raise LoweringError(
                    f"index {idx} outside channel array {e.base.ident!r}[{info.size}]",
                    e.span,
                )
            return f"{info.base}.{idx}"
        raise LoweringError(f"cannot {use} a non-channel expression", getattr(e, "span", None))

    # -- expressions

    def expr(self, e: ast.Expr) -> k.KExpr:
        if isinstance(e, ast.IntLit):
            return k.KInt(e.value)
        if isinstance(e, ast.FloatLit):
            return k.KFloat(e.value)
        if isinstance(e, ast.BoolLit):
            return k.KBool(e.value)
        if isinstance(e, ast.Name):
            var = self._lookup(e.ident)
            if var is not None:
                return k.KVar(var)
            hit = self.ctx.registry.lookup(e.ident)
            if hit is not None:
                info, idx = hit
                if idx is None and info.size is not None:
                    raise LoweringError(
                        f"channel array {e.ident!r} needs an element index", e.span
                    )
                return k.KRead(e.ident)
            raise LoweringError(f"unknown name {e.ident!r}", e.span)
        if isinstance(e, ast.Index):
            return k.KRead(self._channel_id(e, "read"))
        if isinstance(e, ast.Fresh):
            return k.KFresh(self._channel_id(e.chan, "poll"))
        if isinstance(e, ast.Unary):
            return k.KUnary(e.op, self.expr(e.operand))
        if isinstance(e, ast.Binary):
            return k.KBinary(e.op, self.expr(e.left), self.expr(e.right))
        if isinstance(e, ast.Call):
            return k.KCall(e.func, tuple(self.expr(a) for a in e.args))
        raise LoweringError(f"cannot lower expression {e!r}", getattr(e, "span", None))

    # -- statements

    def stmt(self, s) -> k.KTerm:
        if isinstance(s, Named):
            return self.stmt(s.body)
        if isinstance(s, (ast.Skip, ast.ConstDecl)):
            return k.NOTHING
        if isinstance(s, ast.Seq):
            return k.kseq([self.stmt(x) for x in s.stmts])
        if isinstance(s, ast.VarBlock):
            self.scopes.append({})
            name = self._alloc(s.name)
            head: k.KTerm
            if s.init is not None:
                head = k.KAssign(name, self.expr(s.init))
            else:
                head = k.KVarDecl(name)
            body = self.stmt(s.body)
            self.scopes.pop()
            return k.kseq([head, body])
        if isinstance(s, ast.Task):
            return self._task(s)
        if isinstance(s, ast.Abort):
            label = self.ctx.next_label()
            return k.KAbort(self.stmt(s.body), self.expr(s.cond), label, s.weak, s.immediate)
        if isinstance(s, ast.If):
            els = self.stmt(s.els) if s.els is not None else k.NOTHING
            return k.KIf(self.expr(s.cond), self.stmt(s.then), els)
        if isinstance(s, ast.Assign):
            if not isinstance(s.target, ast.Name):
                raise LoweringError("only plain variables can be assigned", s.span)
            var = self._lookup(s.target.ident)
            if var is None:
                var = self._alloc(s.target.ident)
            return k.KAssign(var, self.expr(s.value))
        if isinstance(s, ast.Send):
            chan = self._channel_id(s.chan, "send")
            value = self.expr(s.value)
            sends: list[k.KTerm] = [k.KSend(chan, value)]
            for tap in self.ctx.taps.get(chan, ()):
                sends.append(k.KSend(tap, value))
            return k.kseq(sends)
        if isinstance(s, ast.ExprStmt):
            return k.KExprStmt(self.expr(s.expr))
        if isinstance(s, ast.Iterate):
            raise LoweringError("iteration bound must be a compile-time constant", s.span)
        raise LoweringError(
            f"cannot lower statement {type(s).__name__}", getattr(s, "span", None)
        )

    def _task_params(self, s: ast.Task) -> TaskParams:
        vals = []
        for label, e in (("period", s.period), ("duration", s.duration), ("offset", s.offset)):
            v = eval_const_expr(e)
            if not isinstance(v, int) or isinstance(v, bool):
                raise LoweringError(f"task {label} must be a constant integer", s.span)
            vals.append(v)
        return TaskParams(*vals)

    def _task(self, s: ast.Task) -> k.KTerm:
        params = self._task_params(s)
        if params.duration > params.period:
            raise LoweringError(
                "replicated tasks are lowered at the thread level", s.span
            )
        body = self.stmt(s.body)
        term, uid = lower_task(params, body)
        self.tasks.append(
            k.TaskMeta(self.name, params.period, params.duration, params.offset, uid)
        )
        return term


def _find_long_task(s) -> Optional[ast.Task]:
    """Locate a task whose duration exceeds its period, if any."""
    hits: list[ast.Task] = []

    def walk(node) -> None:
        if isinstance(node, Named):
            walk(node.body)
        elif isinstance(node, ast.Seq):
            for x in node.stmts:
                walk(x)
        elif isinstance(node, ast.VarBlock):
            walk(node.body)
        elif isinstance(node, ast.Abort):
            walk(node.body)
        elif isinstance(node, ast.If):
            walk(node.then)
            if node.els is not None:
                walk(node.els)
        elif isinstance(node, ast.Task):
            p = eval_const_expr(node.period)
            d = eval_const_expr(node.duration)
            if isinstance(p, int) and isinstance(d, int) and d > p:
                hits.append(node)

    walk(s)
    if len(hits) > 1:
        raise LoweringError("only one task per thread can outrun its period", hits[1].span)
    return hits[0] if hits else None


class _ProgramContext:
    def __init__(self, registry: Registry, taps: Mapping[str, tuple[str, ...]]) -> None:
        self.registry = registry
        self.taps = dict(taps)
        self._labels = 0

    def next_label(self) -> str:
        self._labels += 1
        return f"abort_{self._labels - 1}"


class _ReplicaBuilder(ThreadBuilder):
    """Thread conversion with one long task swapped for a staggered copy."""

    def __init__(self, name, ctx, target: ast.Task, params: TaskParams) -> None:
        super().__init__(name, ctx)
        self.target = target
        self.params = params

    def _task(self, s: ast.Task) -> k.KTerm:
        if s is not self.target:
            return super()._task(s)
        body = self.stmt(s.body)
        term, uid = lower_task(self.params, body, allow_wrap=True)
        self.tasks.append(
            k.TaskMeta(
                self.name,
                self.params.period,
                self.params.duration,
                self.params.offset,
                uid,
            )
        )
        return term


def to_kernel(
    program: ast.SurfaceProgram,
    entry_args: Optional[Mapping[str, object]] = None,
    stimulus_channels: Sequence[str] = (),
) -> k.KernelProgram:
    """Lower a surface program all the way to a kernel program."""
    resolved = resolve_constants(program, entry_args)
    registry = Registry()
    body = Instantiator(resolved, registry).entry_body()
    raw = split_threads(body, resolved.entry)

    taps: dict[str, tuple[str, ...]] = {}
    for primary, shadow in program.taps:
        taps[primary] = taps.get(primary, ()) + (shadow,)
    ctx = _ProgramContext(registry, taps)

    threads: dict[str, k.KTerm] = {}
    tasks: list[k.TaskMeta] = []
    muxes: dict[str, k.MuxSpec] = {}

    for rt in raw:
        long = _find_long_task(rt.body)
        if long is None:
            builder = ThreadBuilder(rt.name, ctx)
            term = insert_checkaborts(builder.stmt(rt.body))
            if rt.name in threads:
                raise LoweringError(f"duplicate thread name {rt.name!r}")
            threads[rt.name] = term
            tasks.extend(builder.tasks)
            continue

        base = TaskParams(
            eval_const_expr(long.period),  # type: ignore[arg-type]
            eval_const_expr(long.duration),  # type: ignore[arg-type]
            eval_const_expr(long.offset),  # type: ignore[arg-type]
        )
        cycle = math.lcm(base.duration, base.period)
        copies = cycle // base.period
        replica_names: list[str] = []
        outputs: list[str] = []
        for j in range(copies):
            rname = f"{rt.name}#p{j}"
            rparams = TaskParams(cycle, base.duration, base.offset + j * base.period)
            builder = _ReplicaBuilder(rname, ctx, long, rparams)
            term = insert_checkaborts(builder.stmt(rt.body))
            if rname in threads:
                raise LoweringError(f"duplicate thread name {rname!r}")
            threads[rname] = term
            tasks.extend(builder.tasks)
            replica_names.append(rname)
            if j == 0:
                sent = [c for kind, c in k.channels_used(term) if kind == "send"]
                outputs = list(dict.fromkeys(sent))
        for chan in outputs:
            residues = tuple(
                ((base.offset + j * base.period + base.duration) % cycle, replica_names[j])
                for j in range(copies)
            )
            muxes[chan] = k.MuxSpec(cycle, residues)

    channels = _assemble_channels(registry, threads, muxes, stimulus_channels)
    prog = k.KernelProgram(threads, channels, tuple(tasks))
    prog.validate_topology()
    return prog


def _assemble_channels(
    registry: Registry,
    threads: Mapping[str, k.KTerm],
    muxes: Mapping[str, k.MuxSpec],
    stimulus_channels: Sequence[str],
) -> dict[str, k.ChannelSpec]:
    writers: dict[str, list[str]] = {}
    readers: dict[str, list[str]] = {}
    for name, term in threads.items():
        for kind, chan in k.channels_used(term):
            bucket = writers if kind == "send" else readers
            row = bucket.setdefault(chan, [])
            if name not in row:
                row.append(name)

    known: set[str] = set()
    out: dict[str, k.ChannelSpec] = {}
    for base in registry.order:
        info = registry.channels[base]
        for cid in info.element_ids():
            known.add(cid)
            w = tuple(writers.get(cid, ()))
            r = tuple(readers.get(cid, ()))
            mux = muxes.get(cid)
            if len(w) > 1 and mux is None:
                raise ValidationError(
                    f"channel {cid!r} has multiple writers: {', '.join(w)}"
                )
            if not w and r and cid not in stimulus_channels:
                raise ValidationError(f"channel {cid!r} is read but never written")
            if len(r) > 1:
                bases = {t.split("#p")[0] for t in r}
                if len(bases) > 1:
                    raise ValidationError(
                        f"channel {cid!r} has multiple readers: {', '.join(r)}"
                    )
            out[cid] = k.ChannelSpec(cid, info.delta, info.elem_type, w, r, info.init, mux)
    for chan in set(writers) | set(readers):
        if chan not in known:
            raise LoweringError(f"channel {chan!r} was never declared")
    return out
