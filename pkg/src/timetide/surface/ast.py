"""Surface abstract syntax.

Spans never participate in equality so that printed-and-reparsed trees
compare equal to their originals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..diagnostics import NO_SPAN, SourceSpan


def _span_field():
    return field(default=NO_SPAN, compare=False, repr=False)


# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class IntLit:
    value: int
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class FloatLit:
    value: float
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class BoolLit:
    value: bool
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Name:
    """A variable, constant, port, or channel reference."""

    ident: str
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Index:
    """`base[index]`: element of a channel array or a value array."""

    base: "Expr"
    index: "Expr"
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Unary:
    op: str  # "!" or "-"
    operand: "Expr"
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / < <= > >= == != and or
    left: "Expr"
    right: "Expr"
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Call:
    """Host function application."""

    func: str
    args: tuple["Expr", ...]
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Fresh:
    """`fresh(ch)`: true while the last received value is unsampled."""

    chan: "Expr"  # Name or Index
    span: SourceSpan = _span_field()


Expr = Union[IntLit, FloatLit, BoolLit, Name, Index, Unary, Binary, Call, Fresh]


# ----------------------------------------------------------------- statements


@dataclass(frozen=True)
class Skip:
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Seq:
    stmts: tuple["Stmt", ...]
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Par:
    """Parallel composition; `<>` is right-associative, so `arms` nests right."""

    left: "Stmt"
    right: "Stmt"
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Binding:
    """One actual argument of `run`, optionally naming the formal port."""

    value: Expr
    port: Optional[str] = None
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Run:
    module: str
    bindings: tuple[Binding, ...]
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Iterate:
    """`foreach` (sequential) or `pareach` (parallel) over 0..bound-1."""

    parallel: bool
    var: str
    bound: Expr
    body: "Stmt"
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class TypeRef:
    base: str  # "int", "float", "bool", or a host type name
    size: Optional[Expr] = None  # array types carry an element count
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class VarBlock:
    name: str
    type: TypeRef
    init: Optional[Expr]
    body: "Stmt"
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class ConstDecl:
    name: str
    type: TypeRef
    value: Expr
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class ChannelDecl:
    name: str
    type: TypeRef
    delay: Expr
    init: Optional[Expr] = None
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class ChanBlock:
    """`chan decls in body end chan`: channels scoped to a statement."""

    channels: tuple[ChannelDecl, ...]
    body: "Stmt"
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Task:
    period: Expr
    duration: Expr
    offset: Expr
    body: "Stmt"
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Abort:
    body: "Stmt"
    cond: Expr
    weak: bool = False
    immediate: bool = False
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Assign:
    target: Expr  # Name or Index over a Name
    value: Expr
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Stmt"
    els: Optional["Stmt"] = None
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class Send:
    chan: Expr  # Name or Index
    value: Expr
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class ExprStmt:
    expr: Expr
    span: SourceSpan = _span_field()


Stmt = Union[
    Skip, Seq, Par, Run, Iterate, VarBlock, ConstDecl, ChanBlock, Task,
    Abort, Assign, If, Send, ExprStmt,
]


# -------------------------------------------------------------------- modules


@dataclass(frozen=True)
class PortDecl:
    name: str
    direction: str  # "input" or "output"
    is_const: bool
    type: TypeRef
    init: Optional[Expr] = None
    span: SourceSpan = _span_field()


@dataclass(frozen=True)
class ModuleDecl:
    name: str
    ports: tuple[PortDecl, ...]
    consts: tuple[ConstDecl, ...]
    channels: tuple[ChannelDecl, ...]
    body: Stmt
    span: SourceSpan = _span_field()

    def port(self, name: str) -> Optional[PortDecl]:
        for p in self.ports:
            if p.name == name:
                return p
        return None


@dataclass(frozen=True)
class SurfaceProgram:
    modules: tuple[ModuleDecl, ...]
    entry: str
    filename: str = field(default="<input>", compare=False)
    # (primary channel, shadow channel) pairs: sends on the primary are
    # duplicated onto the shadow so a monitor thread can observe them
    taps: tuple[tuple[str, str], ...] = ()

    def module(self, name: str) -> Optional[ModuleDecl]:
        for m in self.modules:
            if m.name == name:
                return m
        return None
