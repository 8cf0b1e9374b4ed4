"""Small-step execution of kernel threads.

A thread's state is its residual term, a datastore, and a logical clock.
Between reactions the residual is kept normalized: it either starts with a
sync or the thread has terminated. One reaction applies the leading sync
tick by tick (freshen, pop, push per channel) and then runs the
instantaneous suffix up to the next sync.

The same runner drives both the centralised scheduler and the distributed
node workers; they differ only in the port objects they hand in.
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional, Protocol

from .diagnostics import RuntimeFault, SchedulerBug
from .kernel import (
    KAbort,
    KAssign,
    KBinary,
    KBool,
    KCall,
    KCheckAbort,
    KExpr,
    KExprStmt,
    KFloat,
    KFresh,
    KIf,
    KInt,
    KLoop,
    KNothing,
    KRead,
    KSend,
    KSeq,
    KSync,
    KTerm,
    KUnary,
    KVar,
    KVarDecl,
    NOTHING,
)
from .values import EMPTY, Value, check_is_value, is_empty, wrap_i64

INSTANT_STEP_BUDGET = 1_000_000


# ------------------------------------------------------------------ channels


class ReaderPort(Protocol):
    """Reader end of a channel: one frame per tick, possibly multi-stream."""

    def stage(self, need: int) -> str:
        """Ensure `need` frames can be popped.

        Returns "ready" when they can, "blocked" when more frames may still
        arrive, and "cut" when the writer stopped early so they never will.
        Distributed ports block inside stage instead of returning "blocked".
        """
        ...

    def pop(self) -> Value:
        ...


class WriterPort(Protocol):
    def push(self, value: Value) -> None:
        ...


# --------------------------------------------------------------- expressions


HostTable = Mapping[str, Callable[..., Value]]


def _arith_operands(op: str, left: Value, right: Value, thread: str, theta: int):
    for v in (left, right):
        if is_empty(v):
            raise RuntimeFault(
                f"empty frame in {op!r}; test fresh() before using a channel value",
                thread,
                theta,
            )


def eval_expr(
    e: KExpr,
    data: dict[str, Value],
    hosts: Optional[HostTable] = None,
    *,
    thread: str = "?",
    theta: int = 0,
    effect_free: bool = False,
) -> Value:
    """Evaluate an expression against a thread datastore.

    Reads clear the channel's freshness flag unless effect_free is set
    (abort conditions are evaluated without consuming freshness).
    """
    if isinstance(e, (KInt, KFloat, KBool)):
        return e.value
    if isinstance(e, KVar):
        try:
            return data[e.name]
        except KeyError:
            raise RuntimeFault(f"variable {e.name!r} used before declaration", thread, theta)
    if isinstance(e, KRead):
        if not effect_free:
            data[f"fresh:{e.chan}"] = False
        return data.get(f"last:{e.chan}", EMPTY)
    if isinstance(e, KFresh):
        return bool(data.get(f"fresh:{e.chan}", False))
    if isinstance(e, KUnary):
        v = eval_expr(e.operand, data, hosts, thread=thread, theta=theta, effect_free=effect_free)
        if e.op == "-":
            if is_empty(v) or isinstance(v, bool) or not isinstance(v, (int, float)):
                raise RuntimeFault(f"cannot negate a {_tyname(v)}", thread, theta)
            return wrap_i64(-v) if isinstance(v, int) else -v
        if e.op in ("!", "not"):
            if not isinstance(v, bool):
                raise RuntimeFault(f"cannot negate a {_tyname(v)} as boolean", thread, theta)
            return not v
        raise RuntimeFault(f"unknown unary operator {e.op!r}", thread, theta)
    if isinstance(e, KBinary):
        if e.op in ("and", "or"):
            lv = eval_expr(e.left, data, hosts, thread=thread, theta=theta, effect_free=effect_free)
            if not isinstance(lv, bool):
                raise RuntimeFault(f"{e.op} needs booleans, got {_tyname(lv)}", thread, theta)
            if e.op == "and" and not lv:
                return False
            if e.op == "or" and lv:
                return True
            rv = eval_expr(e.right, data, hosts, thread=thread, theta=theta, effect_free=effect_free)
            if not isinstance(rv, bool):
                raise RuntimeFault(f"{e.op} needs booleans, got {_tyname(rv)}", thread, theta)
            return rv
        lv = eval_expr(e.left, data, hosts, thread=thread, theta=theta, effect_free=effect_free)
        rv = eval_expr(e.right, data, hosts, thread=thread, theta=theta, effect_free=effect_free)
        return _binop(e.op, lv, rv, thread, theta)
    if isinstance(e, KCall):
        if hosts is None or e.func not in hosts:
            raise RuntimeFault(f"unknown host function {e.func!r}", thread, theta)
        args = [
            eval_expr(a, data, hosts, thread=thread, theta=theta, effect_free=effect_free)
            for a in e.args
        ]
        try:
            result = hosts[e.func](*args)
        except RuntimeFault:
            raise
        except Exception as exc:  # host bugs surface as program faults
            raise RuntimeFault(f"host function {e.func!r} failed: {exc}", thread, theta)
        return check_is_value(result)
    raise RuntimeFault(f"cannot evaluate {type(e).__name__}", thread, theta)


def _tyname(v: Value) -> str:
    from .values import type_name

    return type_name(v)


def _binop(op: str, lv: Value, rv: Value, thread: str, theta: int) -> Value:
    if op == "==":
        return _values_equal(lv, rv)
    if op == "!=":
        return not _values_equal(lv, rv)
    _arith_operands(op, lv, rv, thread, theta)
    numeric = (
        isinstance(lv, (int, float))
        and isinstance(rv, (int, float))
        and not isinstance(lv, bool)
        and not isinstance(rv, bool)
    )
    if not numeric:
        raise RuntimeFault(
            f"operator {op!r} needs numbers, got {_tyname(lv)} and {_tyname(rv)}",
            thread,
            theta,
        )
    if op == "+":
        out = lv + rv
    elif op == "-":
        out = lv - rv
    elif op == "*":
        out = lv * rv
    elif op == "/":
        if rv == 0:
            raise RuntimeFault("division by zero", thread, theta)
        if isinstance(lv, int) and isinstance(rv, int):
            q = abs(lv) // abs(rv)
            out = q if (lv < 0) == (rv < 0) else -q
        else:
            out = lv / rv
    elif op == "<":
        return lv < rv
    elif op == "<=":
        return lv <= rv
    elif op == ">":
        return lv > rv
    elif op == ">=":
        return lv >= rv
    else:
        raise RuntimeFault(f"unknown operator {op!r}", thread, theta)
    if isinstance(lv, int) and isinstance(rv, int):
        return wrap_i64(out)
    return out


def _values_equal(lv: Value, rv: Value) -> bool:
    if is_empty(lv) or is_empty(rv):
        return lv is rv
    if isinstance(lv, bool) != isinstance(rv, bool):
        return False
    return lv == rv


# ------------------------------------------------------------------- residual


def leading_sync(term: KTerm) -> Optional[KSync]:
    """The sync a normalized residual is waiting on, if any."""
    while isinstance(term, (KSeq, KAbort)):
        term = term.head if isinstance(term, KSeq) else term.body
    return term if isinstance(term, KSync) else None


def _leading_checkabort(term: KTerm) -> Optional[KCheckAbort]:
    while True:
        if isinstance(term, KSeq):
            term = term.head
        elif isinstance(term, KAbort):
            term = term.body
        elif isinstance(term, KCheckAbort):
            return term
        else:
            return None


class ReactionStatus:
    RAN = "ran"
    TERMINATED = "terminated"
    CUT = "cut"


class TraceSink(Protocol):
    def push(self, thread: str, theta: int, chan: str, value: Value) -> None:
        ...

    def body_complete(self, thread: str, theta: int) -> None:
        ...


class ThreadRunner:
    """Executes one kernel thread against reader and writer ports."""

    def __init__(
        self,
        name: str,
        term: KTerm,
        *,
        inbound: Mapping[str, ReaderPort],
        outbound: Mapping[str, WriterPort],
        duration_uids: frozenset[int] = frozenset(),
        hosts: Optional[HostTable] = None,
        trace: Optional[TraceSink] = None,
    ) -> None:
        self.name = name
        self.residual: KTerm = term
        self.data: dict[str, Value] = {}
        self.theta = 0
        self.inbound = dict(inbound)
        self.outbound = dict(outbound)
        self.duration_uids = duration_uids
        self.hosts = hosts
        self.trace = trace
        self.stopped = False  # set when a reaction can never complete
        self.run_instantaneous()

    # -- status

    @property
    def terminated(self) -> bool:
        return isinstance(self.residual, KNothing)

    def pending_sync(self) -> Optional[KSync]:
        return leading_sync(self.residual)

    # -- execution

    def run_instantaneous(self) -> None:
        """Rewrite the residual until it waits on a sync or terminates."""
        budget = INSTANT_STEP_BUDGET
        while not isinstance(self.residual, KNothing) and self.pending_sync() is None:
            self.residual = self._step(self.residual)
            budget -= 1
            if budget <= 0:
                raise SchedulerBug(
                    f"thread {self.name!r} ran {INSTANT_STEP_BUDGET} steps "
                    "without reaching a sync"
                )

    def _eval(self, e: KExpr, effect_free: bool = False) -> Value:
        return eval_expr(
            e,
            self.data,
            self.hosts,
            thread=self.name,
            theta=self.theta,
            effect_free=effect_free,
        )

    def _step(self, t: KTerm) -> KTerm:
        if isinstance(t, KSeq):
            if isinstance(t.head, KNothing):
                return t.tail
            return KSeq(self._step(t.head), t.tail)
        if isinstance(t, KVarDecl):
            self.data[t.name] = EMPTY
            return NOTHING
        if isinstance(t, KAssign):
            self.data[t.name] = self._eval(t.value)
            return NOTHING
        if isinstance(t, KExprStmt):
            self._eval(t.expr)
            return NOTHING
        if isinstance(t, KSend):
            self.data[f"buff:{t.chan}"] = self._eval(t.value)
            return NOTHING
        if isinstance(t, KIf):
            cond = self._eval(t.cond)
            if not isinstance(cond, bool):
                raise RuntimeFault(
                    f"if condition is {_tyname(cond)}, not bool", self.name, self.theta
                )
            return t.then if cond else t.els
        if isinstance(t, KLoop):
            return KSeq(t.body, t)
        if isinstance(t, KCheckAbort):
            # reached only when no enclosing abort fired on it
            return NOTHING
        if isinstance(t, KAbort):
            if isinstance(t.body, KNothing):
                return NOTHING
            check = _leading_checkabort(t.body)
            if check is not None and check.label == t.label:
                if self._abort_fires(t):
                    return NOTHING
            return KAbort(self._step(t.body), t.cond, t.label, t.weak, t.immediate)
        raise SchedulerBug(f"no instantaneous rule for {type(t).__name__}")

    def _abort_fires(self, t: KAbort) -> bool:
        cond = self._eval(t.cond, effect_free=True)
        if not isinstance(cond, bool):
            raise RuntimeFault(
                f"abort condition is {_tyname(cond)}, not bool", self.name, self.theta
            )
        return cond

    def sync_tick(self) -> None:
        """One logical tick: freshen and pop inputs, push buffered outputs."""
        for chan, port in self.inbound.items():
            value = port.pop()
            if not is_empty(value):
                self.data[f"fresh:{chan}"] = True
                self.data[f"last:{chan}"] = value
        for chan, port in self.outbound.items():
            buffered = self.data.get(f"buff:{chan}", EMPTY)
            if self.trace is not None:
                self.trace.push(self.name, self.theta, chan, buffered)
            port.push(buffered)
            self.data[f"buff:{chan}"] = EMPTY
        self.theta += 1

    def react(self) -> str:
        """Complete the pending sync and run up to the next one."""
        if self.terminated:
            return ReactionStatus.TERMINATED
        sync = self.pending_sync()
        if sync is None:
            raise SchedulerBug(f"react on thread {self.name!r} with no pending sync")
        for port in self.inbound.values():
            if port.stage(sync.amount) == "cut":
                self.stopped = True
                return ReactionStatus.CUT
        for _ in range(sync.amount):
            self.sync_tick()
        self.residual = _consume_sync(self.residual)
        if sync.uid in self.duration_uids and self.trace is not None:
            self.trace.body_complete(self.name, self.theta)
        self.run_instantaneous()
        return ReactionStatus.TERMINATED if self.terminated else ReactionStatus.RAN


def _consume_sync(term: KTerm) -> KTerm:
    """Remove the leading sync from a normalized residual."""
    if isinstance(term, KSync):
        return NOTHING
    if isinstance(term, KSeq):
        head = _consume_sync(term.head)
        if isinstance(head, KNothing):
            return term.tail
        return KSeq(head, term.tail)
    if isinstance(term, KAbort):
        return KAbort(_consume_sync(term.body), term.cond, term.label, term.weak, term.immediate)
    raise SchedulerBug("residual does not start with a sync")
