"""Compile-time constant resolution.

Substitutes `const` declarations and entry-module `input const` ports with
literal values, folding arithmetic as it goes. Constants bound at `run`
sites are substituted later, during instantiation, using the same folding
helpers.
"""

from __future__ import annotations

from dataclasses import replace as dc_replace
from typing import Mapping, Optional

from ..diagnostics import LoweringError
from . import ast

ConstEnv = Mapping[str, object]


def eval_const_expr(e: ast.Expr) -> Optional[object]:
    """Evaluate a literal-only expression; None when not compile-time."""
    if isinstance(e, ast.IntLit):
        return e.value
    if isinstance(e, ast.FloatLit):
        return e.value
    if isinstance(e, ast.BoolLit):
        return e.value
    if isinstance(e, ast.Unary):
        v = eval_const_expr(e.operand)
        if v is None:
            return None
        if e.op == "-":
            return -v
        if e.op == "!":
            return not v
    if isinstance(e, ast.Binary):
        lv = eval_const_expr(e.left)
        rv = eval_const_expr(e.right)
        if lv is None or rv is None:
            return None
        try:
            if e.op == "+":
                return lv + rv
            if e.op == "-":
                return lv - rv
            if e.op == "*":
                return lv * rv
            if e.op == "/":
                if isinstance(lv, int) and isinstance(rv, int):
                    q = abs(lv) // abs(rv)
                    return q if (lv < 0) == (rv < 0) else -q
                return lv / rv
            if e.op == "<":
                return lv < rv
            if e.op == "<=":
                return lv <= rv
            if e.op == ">":
                return lv > rv
            if e.op == ">=":
                return lv >= rv
            if e.op == "==":
                return lv == rv
            if e.op == "!=":
                return lv != rv
            if e.op == "and":
                return bool(lv) and bool(rv)
            if e.op == "or":
                return bool(lv) or bool(rv)
        except ZeroDivisionError:
            raise LoweringError("division by zero in a constant expression", e.span)
    return None


def literal_for(value: object, span) -> ast.Expr:
    if isinstance(value, bool):
        return ast.BoolLit(value, span)
    if isinstance(value, int):
        return ast.IntLit(value, span)
    if isinstance(value, float):
        return ast.FloatLit(value, span)
    raise LoweringError(f"constant has unsupported type {type(value).__name__}", span)


def fold_expr(e: ast.Expr, env: ConstEnv) -> ast.Expr:
    """Substitute names bound in env and collapse literal subtrees."""
    if isinstance(e, ast.Name):
        if e.ident in env:
            return literal_for(env[e.ident], e.span)
        return e
    if isinstance(e, (ast.IntLit, ast.FloatLit, ast.BoolLit)):
        return e
    if isinstance(e, ast.Index):
        return ast.Index(fold_expr(e.base, env), fold_expr(e.index, env), e.span)
    if isinstance(e, ast.Unary):
        out = ast.Unary(e.op, fold_expr(e.operand, env), e.span)
    elif isinstance(e, ast.Binary):
        out = ast.Binary(e.op, fold_expr(e.left, env), fold_expr(e.right, env), e.span)
    elif isinstance(e, ast.Call):
        return ast.Call(e.func, tuple(fold_expr(a, env) for a in e.args), e.span)
    elif isinstance(e, ast.Fresh):
        return ast.Fresh(fold_expr(e.chan, env), e.span)
    else:
        raise LoweringError(f"cannot fold expression {e!r}", getattr(e, "span", None))
    value = eval_const_expr(out)
    return literal_for(value, e.span) if value is not None else out


def fold_type(t: ast.TypeRef, env: ConstEnv) -> ast.TypeRef:
    if t.size is None:
        return t
    return ast.TypeRef(t.base, fold_expr(t.size, env), t.span)


def _without(env: ConstEnv, name: str) -> ConstEnv:
    if name in env:
        trimmed = dict(env)
        del trimmed[name]
        return trimmed
    return env


def fold_stmt(s: ast.Stmt, env: ConstEnv) -> ast.Stmt:
    if isinstance(s, ast.Skip):
        return s
    if isinstance(s, ast.Seq):
        out: list[ast.Stmt] = []
        scope = dict(env)
        for inner in s.stmts:
            folded = fold_stmt(inner, scope)
            out.append(folded)
            if isinstance(folded, ast.ConstDecl):
                value = eval_const_expr(folded.value)
                if value is not None:
                    scope[folded.name] = value
        return ast.Seq(tuple(out), s.span)
    if isinstance(s, ast.Par):
        return ast.Par(fold_stmt(s.left, env), fold_stmt(s.right, env), s.span)
    if isinstance(s, ast.Run):
        bindings = tuple(
            ast.Binding(fold_expr(b.value, env), b.port, b.span) for b in s.bindings
        )
        return ast.Run(s.module, bindings, s.span)
    if isinstance(s, ast.Iterate):
        inner_env = _without(env, s.var)
        return ast.Iterate(
            s.parallel, s.var, fold_expr(s.bound, env), fold_stmt(s.body, inner_env), s.span
        )
    if isinstance(s, ast.VarBlock):
        init = fold_expr(s.init, env) if s.init is not None else None
        inner_env = _without(env, s.name)
        return ast.VarBlock(
            s.name, fold_type(s.type, env), init, fold_stmt(s.body, inner_env), s.span
        )
    if isinstance(s, ast.ConstDecl):
        return ast.ConstDecl(s.name, fold_type(s.type, env), fold_expr(s.value, env), s.span)
    if isinstance(s, ast.ChanBlock):
        channels = tuple(
            dc_replace(
                c,
                type=fold_type(c.type, env),
                delay=fold_expr(c.delay, env),
                init=fold_expr(c.init, env) if c.init is not None else None,
            )
            for c in s.channels
        )
        return ast.ChanBlock(channels, fold_stmt(s.body, env), s.span)
    if isinstance(s, ast.Task):
        return ast.Task(
            fold_expr(s.period, env),
            fold_expr(s.duration, env),
            fold_expr(s.offset, env),
            fold_stmt(s.body, env),
            s.span,
        )
    if isinstance(s, ast.Abort):
        return ast.Abort(fold_stmt(s.body, env), fold_expr(s.cond, env), s.weak, s.immediate, s.span)
    if isinstance(s, ast.Assign):
        return ast.Assign(fold_expr(s.target, env), fold_expr(s.value, env), s.span)
    if isinstance(s, ast.If):
        els = fold_stmt(s.els, env) if s.els is not None else None
        return ast.If(fold_expr(s.cond, env), fold_stmt(s.then, env), els, s.span)
    if isinstance(s, ast.Send):
        return ast.Send(fold_expr(s.chan, env), fold_expr(s.value, env), s.span)
    if isinstance(s, ast.ExprStmt):
        return ast.ExprStmt(fold_expr(s.expr, env), s.span)
    raise LoweringError(f"cannot fold statement {type(s).__name__}", getattr(s, "span", None))


def module_const_env(
    module: ast.ModuleDecl,
    port_values: Mapping[str, object] | None = None,
) -> dict[str, object]:
    """Environment of a module's own constants plus any bound const ports."""
    env: dict[str, object] = dict(port_values or {})
    for c in module.consts:
        folded = fold_expr(c.value, env)
        value = eval_const_expr(folded)
        if value is None:
            raise LoweringError(f"constant {c.name!r} is not compile-time evaluable", c.span)
        if not isinstance(value, (int, bool)):
            raise LoweringError(f"constant {c.name!r} must be an integer or boolean", c.span)
        env[c.name] = value
    return env


def fold_module(module: ast.ModuleDecl, env: ConstEnv) -> ast.ModuleDecl:
    ports = tuple(
        dc_replace(
            p,
            type=fold_type(p.type, env),
            init=fold_expr(p.init, env) if p.init is not None else None,
        )
        for p in module.ports
    )
    consts = tuple(
        ast.ConstDecl(c.name, fold_type(c.type, env), fold_expr(c.value, env), c.span)
        for c in module.consts
    )
    channels = tuple(
        dc_replace(
            c,
            type=fold_type(c.type, env),
            delay=fold_expr(c.delay, env),
            init=fold_expr(c.init, env) if c.init is not None else None,
        )
        for c in module.channels
    )
    return ast.ModuleDecl(module.name, ports, consts, channels, fold_stmt(module.body, env), module.span)


def resolve_constants(
    program: ast.SurfaceProgram,
    entry_args: Mapping[str, object] | None = None,
) -> ast.SurfaceProgram:
    """Fold every statically known constant.

    `input const` ports of non-entry modules stay symbolic until their
    `run` sites are instantiated.
    """
    entry_args = dict(entry_args or {})
    modules: list[ast.ModuleDecl] = []
    for module in program.modules:
        port_values: dict[str, object] = {}
        if module.name == program.entry:
            for port in module.ports:
                if not port.is_const:
                    continue
                if port.name in entry_args:
                    port_values[port.name] = entry_args.pop(port.name)
                elif port.init is not None:
                    value = eval_const_expr(port.init)
                    if value is None:
                        raise LoweringError(
                            f"default for entry constant {port.name!r} is not literal", port.span
                        )
                    port_values[port.name] = value
                else:
                    raise LoweringError(
                        f"entry constant {port.name!r} needs a value (pass --entry-arg)",
                        port.span,
                    )
        env = module_const_env(module, port_values)
        modules.append(fold_module(module, env))
    if entry_args:
        unknown = ", ".join(sorted(entry_args))
        raise LoweringError(f"unknown entry constants: {unknown}")
    return ast.SurfaceProgram(tuple(modules), program.entry, program.filename)
