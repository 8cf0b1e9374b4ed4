"""Static checks over the surface tree.

Catches name, direction, and structural errors before lowering. Checks that
need the fully instantiated thread graph (single writer per channel, single
reader) live in the lowering pass, which knows the exact topology.
"""

from __future__ import annotations

from typing import Iterable, Optional

from ..diagnostics import Diagnostic, DiagnosticSink, ValidationError
from . import ast
from .resolve import eval_const_expr

_INT_LIKE = ("int",)
_BOOL_LIKE = ("bool",)


class _Scope:
    """Lexical names visible at a point in a module body."""

    def __init__(self) -> None:
        self.vars: set[str] = set()
        self.iters: set[str] = set()
        self.consts: set[str] = set()
        self.in_channels: set[str] = set()
        self.out_channels: set[str] = set()

    def clone(self) -> "_Scope":
        out = _Scope()
        out.vars = set(self.vars)
        out.iters = set(self.iters)
        out.consts = set(self.consts)
        out.in_channels = set(self.in_channels)
        out.out_channels = set(self.out_channels)
        return out

    def readable(self, name: str) -> bool:
        return name in self.in_channels

    def writable(self, name: str) -> bool:
        return name in self.out_channels

    def is_channel(self, name: str) -> bool:
        return name in self.in_channels or name in self.out_channels

    def known(self, name: str) -> bool:
        return (
            name in self.vars
            or name in self.iters
            or name in self.consts
            or self.is_channel(name)
        )


class Validator:
    def __init__(self, program: ast.SurfaceProgram, hosts: Optional[dict] = None) -> None:
        self.program = program
        self.hosts = hosts
        self.sink = DiagnosticSink()

    # ---- entry points -------------------------------------------------

    def run(self) -> list[Diagnostic]:
        self._check_instantiation_graph()
        for module in self.program.modules:
            self._check_module(module)
        entry = self.program.module(self.program.entry)
        if entry is not None:
            for port in entry.ports:
                if not port.is_const:
                    self.sink.error(
                        f"entry module {entry.name!r} has unbound channel port {port.name!r}",
                        port.span,
                    )
        self.sink.raise_if_errors()
        return list(self.sink.diagnostics)

    # ---- module graph -------------------------------------------------

    def _check_instantiation_graph(self) -> None:
        edges: dict[str, set[str]] = {m.name: set() for m in self.program.modules}

        def collect(s: ast.Stmt, out: set[str]) -> None:
            if isinstance(s, ast.Run):
                out.add(s.module)
            for child in _children(s):
                collect(child, out)

        for module in self.program.modules:
            collect(module.body, edges[module.name])

        state: dict[str, int] = {}

        def visit(name: str, trail: list[str]) -> None:
            if state.get(name) == 2:
                return
            if state.get(name) == 1:
                cycle = " -> ".join(trail + [name])
                self.sink.error(f"recursive module instantiation: {cycle}")
                return
            state[name] = 1
            for dep in sorted(edges.get(name, ())):
                if dep in edges:
                    visit(dep, trail + [name])
            state[name] = 2

        for name in edges:
            visit(name, [])

    # ---- per-module checks ---------------------------------------------

    def _check_module(self, module: ast.ModuleDecl) -> None:
        seen: dict[str, object] = {}
        for item in (*module.ports, *module.consts, *module.channels):
            name = item.name
            if name in seen:
                self.sink.error(
                    f"duplicate declaration {name!r} in module {module.name!r}", item.span
                )
            seen[name] = item

        scope = _Scope()
        for port in module.ports:
            if port.is_const:
                if port.direction != "input":
                    self.sink.error(
                        f"const port {port.name!r} must be an input", port.span
                    )
                if port.type.base not in _INT_LIKE + _BOOL_LIKE or port.type.size is not None:
                    self.sink.error(
                        f"const port {port.name!r} must be a scalar int or bool", port.span
                    )
                scope.consts.add(port.name)
            else:
                # output ports may carry a default that seeds the bound channel
                if port.init is not None and port.direction == "input":
                    self.sink.error(
                        f"input port {port.name!r} cannot have a default value", port.span
                    )
                if port.direction == "input":
                    scope.in_channels.add(port.name)
                else:
                    scope.out_channels.add(port.name)
        for const in module.consts:
            scope.consts.add(const.name)
        for chan in module.channels:
            self._check_channel_decl(chan)
            scope.in_channels.add(chan.name)
            scope.out_channels.add(chan.name)

        self._check_stmt(module.body, module, scope, in_task=False)

    def _check_channel_decl(self, chan: ast.ChannelDecl) -> None:
        delay = eval_const_expr(chan.delay)
        if delay is not None:
            if not isinstance(delay, int) or isinstance(delay, bool) or delay < 0:
                self.sink.error(
                    f"channel {chan.name!r} has invalid delay {delay!r}; "
                    "delay must be a non-negative integer",
                    chan.span,
                )
        if chan.type.size is not None:
            size = eval_const_expr(chan.type.size)
            if size is not None and (not isinstance(size, int) or size < 1):
                self.sink.error(
                    f"channel array {chan.name!r} has invalid size {size!r}", chan.span
                )

    # ---- statements -----------------------------------------------------

    def _check_stmt(
        self, s: ast.Stmt, module: ast.ModuleDecl, scope: _Scope, in_task: bool
    ) -> None:
        if isinstance(s, ast.Skip):
            return
        if isinstance(s, ast.Seq):
            inner = scope.clone()
            for child in s.stmts:
                self._check_stmt(child, module, inner, in_task)
                if isinstance(child, ast.ConstDecl):
                    inner.consts.add(child.name)
            return
        if isinstance(s, ast.Par):
            if in_task:
                self.sink.error("parallel composition cannot appear inside a task", s.span)
            self._check_stmt(s.left, module, scope, in_task)
            self._check_stmt(s.right, module, scope, in_task)
            self._check_par_sharing(s, scope)
            return
        if isinstance(s, ast.Run):
            if in_task:
                self.sink.error("run cannot appear inside a task", s.span)
            self._check_run(s, module, scope)
            return
        if isinstance(s, ast.Iterate):
            if s.parallel and in_task:
                self.sink.error("pareach cannot appear inside a task", s.span)
            bound = eval_const_expr(s.bound)
            if bound is not None and (not isinstance(bound, int) or bound < 0):
                self.sink.error(
                    f"iteration bound must be a non-negative integer, got {bound!r}", s.span
                )
            if bound is None and not isinstance(s.bound, ast.Name):
                self.sink.error("iteration bound must be a compile-time constant", s.span)
            inner = scope.clone()
            inner.iters.add(s.var)
            self._check_stmt(s.body, module, inner, in_task)
            return
        if isinstance(s, ast.VarBlock):
            if s.init is not None:
                self._check_expr(s.init, scope)
            inner = scope.clone()
            inner.vars.add(s.name)
            self._check_stmt(s.body, module, inner, in_task)
            return
        if isinstance(s, ast.ConstDecl):
            self._check_expr(s.value, scope)
            return
        if isinstance(s, ast.ChanBlock):
            if in_task:
                self.sink.error("channel declarations cannot appear inside a task", s.span)
            inner = scope.clone()
            for chan in s.channels:
                self._check_channel_decl(chan)
                inner.in_channels.add(chan.name)
                inner.out_channels.add(chan.name)
            self._check_stmt(s.body, module, inner, in_task)
            return
        if isinstance(s, ast.Task):
            if in_task:
                self.sink.error("tasks cannot be nested", s.span)
            self._check_task_params(s)
            self._check_stmt(s.body, module, scope, in_task=True)
            return
        if isinstance(s, ast.Abort):
            self._check_expr(s.cond, scope)
            self._check_stmt(s.body, module, scope, in_task)
            return
        if isinstance(s, ast.Assign):
            self._check_assign_target(s.target, scope)
            self._check_expr(s.value, scope)
            return
        if isinstance(s, ast.If):
            self._check_expr(s.cond, scope)
            self._check_stmt(s.then, module, scope, in_task)
            if s.els is not None:
                self._check_stmt(s.els, module, scope, in_task)
            return
        if isinstance(s, ast.Send):
            self._check_send(s, scope)
            return
        if isinstance(s, ast.ExprStmt):
            self._check_expr(s.expr, scope)
            return
        self.sink.error(f"unexpected statement {type(s).__name__}", getattr(s, "span", None))

    def _check_task_params(self, task: ast.Task) -> None:
        period = eval_const_expr(task.period)
        duration = eval_const_expr(task.duration)
        offset = eval_const_expr(task.offset)
        if period is not None and (not isinstance(period, int) or period < 1):
            self.sink.error(f"task period must be a positive integer, got {period!r}", task.span)
        if duration is not None and (not isinstance(duration, int) or duration < 1):
            self.sink.error(
                f"task duration must be a positive integer, got {duration!r}", task.span
            )
        if offset is not None and (not isinstance(offset, int) or offset < 0):
            self.sink.error(
                f"task offset must be a non-negative integer, got {offset!r}", task.span
            )
        if (
            isinstance(period, int)
            and isinstance(duration, int)
            and period >= 1
            and duration >= 1
        ):
            # duration > period is fine: lowering staggers replica copies
            if duration <= period and offset is not None and (
                (offset % period) + duration > period
            ):
                self.sink.error(
                    f"task window (offset {offset} mod period {period}) + duration "
                    f"{duration} crosses the period boundary",
                    task.span,
                )

    def _check_run(self, s: ast.Run, module: ast.ModuleDecl, scope: _Scope) -> None:
        target = self.program.module(s.module)
        if target is None:
            self.sink.error(f"run of unknown module {s.module!r}", s.span)
            for b in s.bindings:
                self._check_expr(b.value, scope)
            return
        ports = list(target.ports)
        port_names = {p.name for p in ports}
        bound: set[str] = set()
        positional = 0
        for b in s.bindings:
            if b.port is not None:
                if b.port not in port_names:
                    self.sink.error(
                        f"module {target.name!r} has no port {b.port!r}", b.span
                    )
                    continue
                port = target.port(b.port)
            else:
                if positional >= len(ports):
                    self.sink.error(
                        f"too many bindings for module {target.name!r} "
                        f"({len(ports)} ports declared)",
                        b.span,
                    )
                    continue
                port = ports[positional]
                positional += 1
            assert port is not None
            if port.name in bound:
                self.sink.error(f"port {port.name!r} bound twice", b.span)
            bound.add(port.name)
            self._check_binding(b, port, scope)
        for port in ports:
            if port.name not in bound and not (port.is_const and port.init is not None):
                self.sink.error(
                    f"run of {target.name!r} leaves port {port.name!r} unbound", s.span
                )

    def _check_binding(self, b: ast.Binding, port: ast.PortDecl, scope: _Scope) -> None:
        if port.is_const:
            self._check_expr(b.value, scope)
            value = eval_const_expr(b.value)
            if value is None and not isinstance(b.value, (ast.Name, ast.Index)):
                self.sink.error(
                    f"const port {port.name!r} needs a compile-time constant", b.span
                )
            return
        expr = b.value
        if not isinstance(expr, (ast.Name, ast.Index)):
            self.sink.error(
                f"channel port {port.name!r} must be bound to a channel name", b.span
            )
            return
        base = expr if isinstance(expr, ast.Name) else expr.base
        if not isinstance(base, ast.Name) or not scope.is_channel(base.ident):
            self.sink.error(
                f"channel port {port.name!r} must be bound to a channel in scope", b.span
            )

    def _check_send(self, s: ast.Send, scope: _Scope) -> None:
        target = s.chan
        base = target if isinstance(target, ast.Name) else None
        if isinstance(target, ast.Index) and isinstance(target.base, ast.Name):
            base = target.base
            self._check_expr(target.index, scope)
        if base is None:
            self.sink.error("send target must be a channel name", s.span)
        elif not scope.is_channel(base.ident):
            self.sink.error(f"send on unknown channel {base.ident!r}", s.span)
        elif not scope.writable(base.ident):
            self.sink.error(f"cannot send on input port {base.ident!r}", s.span)
        self._check_expr(s.value, scope)

    def _check_assign_target(self, target: ast.Expr, scope: _Scope) -> None:
        if isinstance(target, ast.Index):
            if isinstance(target.base, ast.Name) and target.base.ident in scope.vars:
                self._check_expr(target.index, scope)
                return
            self.sink.error("assignment target must be a declared variable", target.span)
            return
        if not isinstance(target, ast.Name):
            self.sink.error("assignment target must be a name", getattr(target, "span", None))
            return
        name = target.ident
        if name in scope.vars:
            return
        if name in scope.consts:
            self.sink.error(f"cannot assign to constant {name!r}", target.span)
        elif scope.is_channel(name):
            self.sink.error(f"cannot assign to channel {name!r}; use send", target.span)
        elif name in scope.iters:
            self.sink.error(f"cannot assign to iterator {name!r}", target.span)
        else:
            self.sink.error(f"assignment to undeclared variable {name!r}", target.span)

    # ---- expressions ----------------------------------------------------

    def _check_expr(self, e: ast.Expr, scope: _Scope) -> None:
        if isinstance(e, (ast.IntLit, ast.FloatLit, ast.BoolLit)):
            return
        if isinstance(e, ast.Name):
            if not scope.known(e.ident):
                self.sink.error(f"unknown name {e.ident!r}", e.span)
            elif e.ident in scope.out_channels and e.ident not in scope.in_channels:
                self.sink.error(f"cannot read output port {e.ident!r}", e.span)
            return
        if isinstance(e, ast.Index):
            self._check_expr(e.base, scope)
            self._check_expr(e.index, scope)
            return
        if isinstance(e, ast.Unary):
            self._check_expr(e.operand, scope)
            return
        if isinstance(e, ast.Binary):
            self._check_expr(e.left, scope)
            self._check_expr(e.right, scope)
            return
        if isinstance(e, ast.Call):
            if self.hosts is not None and e.func not in self.hosts:
                self.sink.error(f"unknown host function {e.func!r}", e.span)
            for a in e.args:
                self._check_expr(a, scope)
            return
        if isinstance(e, ast.Fresh):
            chan = e.chan
            base = chan if isinstance(chan, ast.Name) else None
            if isinstance(chan, ast.Index) and isinstance(chan.base, ast.Name):
                base = chan.base
                self._check_expr(chan.index, scope)
            if base is None or not scope.is_channel(base.ident):
                self.sink.error("fresh() takes a channel in scope", e.span)
            elif not scope.readable(base.ident):
                self.sink.error(f"fresh() on unreadable channel {base.ident!r}", e.span)
            return
        self.sink.error(f"unexpected expression {type(e).__name__}", getattr(e, "span", None))

    # ---- parallel sharing ------------------------------------------------

    def _check_par_sharing(self, s: ast.Par, scope: _Scope) -> None:
        lr, lw = _var_usage(s.left, scope.vars)
        rr, rw = _var_usage(s.right, scope.vars)
        conflicts = (lw & (rr | rw)) | (rw & lr)
        for name in sorted(conflicts):
            self.sink.error(
                f"variable {name!r} is shared across parallel branches", s.span
            )


def _children(s: ast.Stmt) -> Iterable[ast.Stmt]:
    if isinstance(s, ast.Seq):
        return s.stmts
    if isinstance(s, ast.Par):
        return (s.left, s.right)
    if isinstance(s, (ast.Iterate, ast.VarBlock, ast.ChanBlock, ast.Task, ast.Abort)):
        return (s.body,)
    if isinstance(s, ast.If):
        return (s.then, s.els) if s.els is not None else (s.then,)
    return ()


def _expr_var_reads(e: ast.Expr, names: set[str], out: set[str]) -> None:
    if isinstance(e, ast.Name):
        if e.ident in names:
            out.add(e.ident)
        return
    for attr in ("base", "index", "operand", "left", "right", "value", "chan"):
        child = getattr(e, attr, None)
        if child is not None and isinstance(child, ast.Expr):
            _expr_var_reads(child, names, out)
    for a in getattr(e, "args", ()):
        _expr_var_reads(a, names, out)


def _var_usage(s: ast.Stmt, names: set[str]) -> tuple[set[str], set[str]]:
    """Reads and writes of the given outer variables inside a branch."""
    reads: set[str] = set()
    writes: set[str] = set()

    def walk(node: ast.Stmt, visible: set[str]) -> None:
        if isinstance(node, ast.VarBlock):
            if node.init is not None:
                _expr_var_reads(node.init, visible, reads)
            walk(node.body, visible - {node.name})
            return
        if isinstance(node, ast.Iterate):
            _expr_var_reads(node.bound, visible, reads)
            walk(node.body, visible - {node.var})
            return
        if isinstance(node, ast.Assign):
            target = node.target
            if isinstance(target, ast.Index):
                _expr_var_reads(target.index, visible, reads)
                target = target.base
            if isinstance(target, ast.Name) and target.ident in visible:
                writes.add(target.ident)
            _expr_var_reads(node.value, visible, reads)
            return
        for attr in ("cond", "value", "expr"):
            child = getattr(node, attr, None)
            if child is not None and isinstance(child, ast.Expr):
                _expr_var_reads(child, visible, reads)
        if isinstance(node, ast.Send):
            _expr_var_reads(node.chan, visible, reads)
        if isinstance(node, ast.Run):
            for b in node.bindings:
                _expr_var_reads(b.value, visible, reads)
        for child in _children(node):
            walk(child, visible)

    walk(s, set(names))
    return reads, writes


def validate(program: ast.SurfaceProgram, hosts: Optional[dict] = None) -> list[Diagnostic]:
    """Run all static checks; raises ValidationError when any fail."""
    return Validator(program, hosts).run()
