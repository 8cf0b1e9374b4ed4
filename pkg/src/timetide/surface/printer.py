"""Pretty printer producing surface text that reparses to an equal AST."""

from __future__ import annotations

from . import ast

_PRECEDENCE = {
    "or": 1, "and": 2,
    "<": 3, "<=": 3, ">": 3, ">=": 3, "==": 3, "!=": 3,
    "+": 4, "-": 4, "*": 5, "/": 5,
}


def print_expr(e: ast.Expr, parent_prec: int = 0) -> str:
    if isinstance(e, ast.IntLit):
        text = str(e.value)
        return f"({text})" if e.value < 0 and parent_prec >= 5 else text
    if isinstance(e, ast.FloatLit):
        return repr(e.value)
    if isinstance(e, ast.BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, ast.Name):
        return e.ident
    if isinstance(e, ast.Index):
        return f"{print_expr(e.base, 7)}[{print_expr(e.index)}]"
    if isinstance(e, ast.Unary):
        return f"{e.op}{print_expr(e.operand, 6)}"
    if isinstance(e, ast.Binary):
        prec = _PRECEDENCE[e.op]
        text = f"{print_expr(e.left, prec)} {e.op} {print_expr(e.right, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(e, ast.Call):
        args = ", ".join(print_expr(a) for a in e.args)
        return f"{e.func}({args})"
    if isinstance(e, ast.Fresh):
        return f"fresh({print_expr(e.chan)})"
    raise TypeError(f"unprintable expression: {e!r}")


def print_type(t: ast.TypeRef) -> str:
    if t.size is None:
        return t.base
    return f"{t.base}[{print_expr(t.size)}]"


class _Printer:
    def __init__(self) -> None:
        self.lines: list[str] = []
        self.depth = 0

    def emit(self, text: str) -> None:
        self.lines.append("    " * self.depth + text)

    def stmt(self, s: ast.Stmt) -> None:
        if isinstance(s, ast.Skip):
            return
        if isinstance(s, ast.Seq):
            for inner in s.stmts:
                self.stmt(inner)
            return
        if isinstance(s, ast.Par):
            self.emit("{")
            self.depth += 1
            self.stmt(s.left)
            self.depth -= 1
            self.emit("}")
            self.emit("<>")
            self.emit("{")
            self.depth += 1
            self.stmt(s.right)
            self.depth -= 1
            self.emit("}")
            return
        if isinstance(s, ast.Run):
            parts = []
            for b in s.bindings:
                text = print_expr(b.value, 6)  # keep '/' out of the top level
                if b.port is not None:
                    text += f"/{b.port}"
                parts.append(text)
            self.emit(f"run {s.module}({', '.join(parts)});")
            return
        if isinstance(s, ast.Iterate):
            word = "pareach" if s.parallel else "foreach"
            self.emit(f"{word} {s.var} in {print_expr(s.bound)} {{")
            self.depth += 1
            self.stmt(s.body)
            self.depth -= 1
            self.emit("}")
            return
        if isinstance(s, ast.VarBlock):
            init = f" = {print_expr(s.init)}" if s.init is not None else ""
            self.emit(f"var {s.name} : {print_type(s.type)}{init} in")
            self.depth += 1
            self.stmt(s.body)
            self.depth -= 1
            self.emit("end var;")
            return
        if isinstance(s, ast.ConstDecl):
            self.emit(f"const {s.name} : {print_type(s.type)} = {print_expr(s.value)};")
            return
        if isinstance(s, ast.ChanBlock):
            decls = ", ".join(_chdecl(c) for c in s.channels)
            self.emit(f"chan {decls} in")
            self.depth += 1
            self.stmt(s.body)
            self.depth -= 1
            self.emit("end chan;")
            return
        if isinstance(s, ast.Task):
            head = (
                f"task(period={print_expr(s.period)}, duration={print_expr(s.duration)}, "
                f"offset={print_expr(s.offset)}):"
            )
            self.emit(head)
            self.depth += 1
            self.stmt(s.body)
            self.depth -= 1
            self.emit("end task;")
            return
        if isinstance(s, ast.Abort):
            weak = "weak " if s.weak else ""
            imm = "immediate " if s.immediate else ""
            self.emit(f"{weak}abort {{")
            self.depth += 1
            self.stmt(s.body)
            self.depth -= 1
            self.emit(f"}} when {imm}{print_expr(s.cond)};")
            return
        if isinstance(s, ast.Assign):
            self.emit(f"{print_expr(s.target)} = {print_expr(s.value)};")
            return
        if isinstance(s, ast.If):
            self.emit(f"if ({print_expr(s.cond)}) {{")
            self.depth += 1
            self.stmt(s.then)
            self.depth -= 1
            if s.els is None:
                self.emit("}")
            elif isinstance(s.els, ast.If):
                self.emit("} else")
                self.stmt(s.els)
            else:
                self.emit("} else {")
                self.depth += 1
                self.stmt(s.els)
                self.depth -= 1
                self.emit("}")
            return
        if isinstance(s, ast.Send):
            self.emit(f"send {print_expr(s.chan)}({print_expr(s.value)});")
            return
        if isinstance(s, ast.ExprStmt):
            self.emit(f"{print_expr(s.expr)};")
            return
        raise TypeError(f"unprintable statement: {s!r}")

    def module(self, m: ast.ModuleDecl) -> None:
        self.emit(f"module {m.name}:")
        self.depth += 1
        for p in m.ports:
            const = "const " if p.is_const else ""
            init = f" = {print_expr(p.init)}" if p.init is not None else ""
            self.emit(f"{p.direction} {const}{p.name} : {print_type(p.type)}{init};")
        for c in m.consts:
            self.emit(f"const {c.name} : {print_type(c.type)} = {print_expr(c.value)};")
        for ch in m.channels:
            self.emit(f"channel {_chdecl(ch)};")
        self.stmt(m.body)
        self.depth -= 1
        self.emit("end module;")


def _chdecl(c: ast.ChannelDecl) -> str:
    init = f" = {print_expr(c.init)}" if c.init is not None else ""
    return f"{c.name} : {print_type(c.type)} delay {print_expr(c.delay)}{init}"


def pretty_print(program: ast.SurfaceProgram) -> str:
    printer = _Printer()
    for i, m in enumerate(program.modules):
        if i:
            printer.emit("")
        printer.module(m)
    return "\n".join(printer.lines) + "\n"
