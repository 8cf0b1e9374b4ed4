"""Recursive descent parser for the surface language.

Grammar sketch (statement keywords close with `end <keyword>`):

    program   := module+
    module    := "module" IDENT ":" item* "end" "module" ";"?
    item      := port | const | channel | stmt
    port      := ("input"|"output") "const"? IDENT ("," IDENT)* ":" type
                 ("=" expr)? ";"
    const     := "const" IDENT ":" type "=" expr ";"
    channel   := "channel" chdecl ("," chdecl)* ";"
    chdecl    := IDENT ":" type "delay" expr ("=" expr)?
    stmt      := seq ("<>" stmt)?                      -- right associative
    seq       := simple+
    simple    := "{" stmt "}" ";"?
               | "run" IDENT ("("|"[") binding ("," binding)* (")"|"]") ";"
               | ("foreach"|"pareach") IDENT "in" expr "{" stmt "}" ";"?
               | "var" IDENT varsig "in" stmt "end" "var" ";"?
               | "chan" chdecl ("," chdecl)* "in" stmt "end" "chan" ";"?
               | "task" "(" params ")" ":"? stmt "end" "task" ";"?
               | "weak"? "abort" stmt "when" "immediate"? expr ";"
               | "if" "(" expr ")" "{" stmt "}" ("else" (if | "{" stmt "}"))?
               | "send" chanref "(" expr ")" ";"
               | lvalue ("="|":=") expr ";"
               | expr ";"
    varsig    := ":" type ("=" expr)? | ":=" expr ":" type
    binding   := bexpr ("/" IDENT)?                    -- bexpr has no top "/"
    type      := IDENT ("[" expr "]")?

Expressions use conventional precedence: or < and < comparison < additive
< multiplicative < unary < postfix. Comparisons do not chain.
"""

from __future__ import annotations

from ..diagnostics import ParseError, SourceSpan
from . import ast
from .lexer import Lexer, Token

_TYPE_ALIASES = {"integer": "int", "boolean": "bool"}

_STMT_STARTERS = {
    "run", "foreach", "pareach", "var", "chan", "task", "abort", "weak",
    "if", "send",
}


class Parser:
    def __init__(self, source: str, filename: str = "<input>"):
        self.tokens = Lexer(source, filename).tokens()
        self.index = 0
        self.filename = filename

    # ------------------------------------------------------------- plumbing

    def _current(self) -> Token:
        return self.tokens[self.index]

    def _peek(self, offset: int = 1) -> Token:
        i = min(self.index + offset, len(self.tokens) - 1)
        return self.tokens[i]

    def _advance(self) -> Token:
        tok = self.tokens[self.index]
        if tok.kind != "eof":
            self.index += 1
        return tok

    def _at(self, kind: str, text: str | None = None) -> bool:
        tok = self._current()
        return tok.kind == kind and (text is None or tok.text == text)

    def _at_keyword(self, *words: str) -> bool:
        tok = self._current()
        return tok.kind == "keyword" and tok.text in words

    def _expect(self, kind: str, text: str | None = None) -> Token:
        tok = self._current()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise ParseError(f"expected {want!r}, found {tok.text or tok.kind!r}", tok.span)
        return self._advance()

    def _match_symbol(self, text: str) -> bool:
        if self._at("symbol", text):
            self._advance()
            return True
        return False

    def _match_keyword(self, text: str) -> bool:
        if self._at("keyword", text):
            self._advance()
            return True
        return False

    def _expect_end(self, word: str) -> None:
        self._expect("keyword", "end")
        self._expect("keyword", word)
        self._match_symbol(";")

    # -------------------------------------------------------------- program

    def parse_program(self) -> ast.SurfaceProgram:
        modules: list[ast.ModuleDecl] = []
        while not self._at("eof"):
            modules.append(self.parse_module())
        if not modules:
            raise ParseError("empty program", self._current().span)
        seen: set[str] = set()
        for m in modules:
            if m.name in seen:
                raise ParseError(f"duplicate module name {m.name!r}", m.span)
            seen.add(m.name)
        entry = _find_entry(modules)
        return ast.SurfaceProgram(tuple(modules), entry, self.filename)

    def parse_module(self) -> ast.ModuleDecl:
        span = self._current().span
        self._expect("keyword", "module")
        name = self._expect("ident").text
        self._expect("symbol", ":")
        ports: list[ast.PortDecl] = []
        consts: list[ast.ConstDecl] = []
        channels: list[ast.ChannelDecl] = []
        stmts: list[ast.Stmt] = []
        while not self._at_keyword("end"):
            if self._at("eof"):
                raise ParseError(f"unterminated module {name!r}", span)
            if self._at_keyword("input", "output"):
                ports.extend(self.parse_port_decl())
            elif self._at_keyword("const"):
                consts.append(self.parse_const_decl())
            elif self._at_keyword("channel"):
                channels.extend(self.parse_channel_decl())
            else:
                stmts.append(self.parse_stmt())
        self._expect_end("module")
        body = _seq(stmts, span)
        return ast.ModuleDecl(name, tuple(ports), tuple(consts), tuple(channels), body, span)

    # ----------------------------------------------------------declarations

    def parse_port_decl(self) -> list[ast.PortDecl]:
        span = self._current().span
        direction = self._advance().text
        is_const = self._match_keyword("const")
        names = [self._expect("ident").text]
        while self._match_symbol(","):
            names.append(self._expect("ident").text)
        self._expect("symbol", ":")
        type_ = self.parse_type()
        init = None
        if self._match_symbol("="):
            init = self.parse_expr()
        self._expect("symbol", ";")
        return [ast.PortDecl(n, direction, is_const, type_, init, span) for n in names]

    def parse_const_decl(self) -> ast.ConstDecl:
        span = self._current().span
        self._expect("keyword", "const")
        name = self._expect("ident").text
        self._expect("symbol", ":")
        type_ = self.parse_type()
        self._expect("symbol", "=")
        value = self.parse_expr()
        self._expect("symbol", ";")
        return ast.ConstDecl(name, type_, value, span)

    def _parse_chdecl(self) -> ast.ChannelDecl:
        span = self._current().span
        name = self._expect("ident").text
        self._expect("symbol", ":")
        type_ = self.parse_type()
        self._expect("keyword", "delay")
        delay = self.parse_expr()
        init = None
        if self._match_symbol("="):
            init = self.parse_expr()
        return ast.ChannelDecl(name, type_, delay, init, span)

    def parse_channel_decl(self) -> list[ast.ChannelDecl]:
        self._expect("keyword", "channel")
        decls = [self._parse_chdecl()]
        while self._match_symbol(","):
            if self._at("symbol", ";"):
                break
            decls.append(self._parse_chdecl())
        self._expect("symbol", ";")
        return decls

    def parse_type(self) -> ast.TypeRef:
        tok = self._current()
        if tok.kind not in ("ident", "keyword"):
            raise ParseError(f"expected a type name, found {tok.text!r}", tok.span)
        self._advance()
        base = _TYPE_ALIASES.get(tok.text, tok.text)
        size = None
        if self._match_symbol("["):
            size = self.parse_expr()
            self._expect("symbol", "]")
        return ast.TypeRef(base, size, tok.span)

    # ------------------------------------------------------------ statements

    def parse_stmt(self) -> ast.Stmt:
        span = self._current().span
        left = self.parse_seq()
        if self._at("symbol", "<>"):
            self._advance()
            right = self.parse_stmt()  # right associative
            return ast.Par(left, right, span)
        return left

    def _starts_simple(self) -> bool:
        tok = self._current()
        if tok.kind == "keyword":
            return tok.text in _STMT_STARTERS or tok.text in ("const", "channel")
        if tok.kind == "symbol":
            return tok.text == "{"
        return tok.kind in ("ident", "int", "float") or tok.text in ("!", "-", "(")

    def parse_seq(self) -> ast.Stmt:
        span = self._current().span
        stmts = [self.parse_simple()]
        while self._starts_simple():
            stmts.append(self.parse_simple())
        return _seq(stmts, span)

    def parse_simple(self) -> ast.Stmt:
        tok = self._current()
        span = tok.span
        if self._match_symbol("{"):
            body = self.parse_stmt()
            self._expect("symbol", "}")
            self._match_symbol(";")
            return body
        if self._at_keyword("run"):
            return self.parse_run()
        if self._at_keyword("foreach", "pareach"):
            return self.parse_iterate()
        if self._at_keyword("var"):
            return self.parse_var_block()
        if self._at_keyword("chan"):
            return self.parse_chan_block()
        if self._at_keyword("task"):
            return self.parse_task()
        if self._at_keyword("weak", "abort"):
            return self.parse_abort()
        if self._at_keyword("if"):
            return self.parse_if()
        if self._at_keyword("send"):
            return self.parse_send()
        if self._at_keyword("const"):
            # nested constants behave like module-level ones, scoped to here
            return self.parse_const_decl()
        # assignment or bare expression
        expr = self.parse_expr()
        if self._at("symbol", "=") or self._at("symbol", ":="):
            if not isinstance(expr, (ast.Name, ast.Index)):
                raise ParseError("assignment target must be a name or element", span)
            self._advance()
            value = self.parse_expr()
            self._expect("symbol", ";")
            return ast.Assign(expr, value, span)
        self._expect("symbol", ";")
        return ast.ExprStmt(expr, span)

    def parse_run(self) -> ast.Run:
        span = self._expect("keyword", "run").span
        module = self._expect("ident").text
        closer = ")"
        if self._match_symbol("("):
            closer = ")"
        elif self._match_symbol("["):
            closer = "]"
        else:
            raise ParseError("expected '(' or '[' after run target", self._current().span)
        bindings: list[ast.Binding] = []
        if not self._at("symbol", closer):
            bindings.append(self.parse_binding())
            while self._match_symbol(","):
                bindings.append(self.parse_binding())
        self._expect("symbol", closer)
        self._expect("symbol", ";")
        return ast.Run(module, tuple(bindings), span)

    def parse_binding(self) -> ast.Binding:
        span = self._current().span
        value = self.parse_expr(no_slash=True)
        port = None
        if self._match_symbol("/"):
            port = self._expect("ident").text
        return ast.Binding(value, port, span)

    def parse_iterate(self) -> ast.Iterate:
        tok = self._advance()
        parallel = tok.text == "pareach"
        var = self._expect("ident").text
        self._expect("keyword", "in")
        bound = self.parse_expr()
        self._expect("symbol", "{")
        body = self.parse_stmt()
        self._expect("symbol", "}")
        self._match_symbol(";")
        return ast.Iterate(parallel, var, bound, body, tok.span)

    def parse_var_block(self) -> ast.VarBlock:
        span = self._expect("keyword", "var").span
        name = self._expect("ident").text
        init = None
        if self._match_symbol(":="):
            # `var x := e : T in ...`
            init = self.parse_expr()
            self._expect("symbol", ":")
            type_ = self.parse_type()
        else:
            self._expect("symbol", ":")
            type_ = self.parse_type()
            if self._match_symbol("="):
                init = self.parse_expr()
        self._expect("keyword", "in")
        body = self.parse_stmt()
        self._expect_end("var")
        return ast.VarBlock(name, type_, init, body, span)

    def parse_chan_block(self) -> ast.ChanBlock:
        span = self._expect("keyword", "chan").span
        decls = [self._parse_chdecl()]
        while self._match_symbol(","):
            if self._at("keyword", "in"):
                break  # tolerate a trailing comma before the body
            decls.append(self._parse_chdecl())
        self._expect("keyword", "in")
        body = self.parse_stmt()
        self._expect_end("chan")
        return ast.ChanBlock(tuple(decls), body, span)

    def parse_task(self) -> ast.Task:
        span = self._expect("keyword", "task").span
        self._expect("symbol", "(")
        params: dict[str, ast.Expr] = {}
        while not self._at("symbol", ")"):
            key = self._expect("ident").text
            if key not in ("period", "duration", "offset"):
                raise ParseError(f"unknown task parameter {key!r}", span)
            if key in params:
                raise ParseError(f"duplicate task parameter {key!r}", span)
            self._expect("symbol", "=")
            params[key] = self.parse_expr()
            if not self._at("symbol", ")"):
                self._expect("symbol", ",")
        self._expect("symbol", ")")
        self._match_symbol(":")
        body = self.parse_stmt()
        self._expect_end("task")
        for required in ("period", "duration"):
            if required not in params:
                raise ParseError(f"task is missing the {required!r} parameter", span)
        offset = params.get("offset", ast.IntLit(0, span))
        return ast.Task(params["period"], params["duration"], offset, body, span)

    def parse_abort(self) -> ast.Abort:
        span = self._current().span
        weak = self._match_keyword("weak")
        self._expect("keyword", "abort")
        body = self.parse_stmt()
        self._expect("keyword", "when")
        immediate = self._match_keyword("immediate")
        cond = self.parse_expr()
        self._expect("symbol", ";")
        return ast.Abort(body, cond, weak, immediate, span)

    def parse_if(self) -> ast.If:
        span = self._expect("keyword", "if").span
        self._expect("symbol", "(")
        cond = self.parse_expr()
        self._expect("symbol", ")")
        self._expect("symbol", "{")
        then = self.parse_stmt()
        self._expect("symbol", "}")
        els = None
        if self._match_keyword("else"):
            if self._at_keyword("if"):
                els = self.parse_if()
            else:
                self._expect("symbol", "{")
                els = self.parse_stmt()
                self._expect("symbol", "}")
                self._match_symbol(";")
        else:
            self._match_symbol(";")
        return ast.If(cond, then, els, span)

    def parse_send(self) -> ast.Send:
        span = self._expect("keyword", "send").span
        chan: ast.Expr = ast.Name(self._expect("ident").text, span)
        if self._match_symbol("["):
            index = self.parse_expr()
            self._expect("symbol", "]")
            chan = ast.Index(chan, index, span)
        self._expect("symbol", "(")
        value = self.parse_expr()
        self._expect("symbol", ")")
        self._expect("symbol", ";")
        return ast.Send(chan, value, span)

    # ----------------------------------------------------------- expressions

    def parse_expr(self, no_slash: bool = False) -> ast.Expr:
        return self._parse_or(no_slash)

    def _parse_or(self, no_slash: bool) -> ast.Expr:
        left = self._parse_and(no_slash)
        while self._at_keyword("or"):
            span = self._advance().span
            right = self._parse_and(no_slash)
            left = ast.Binary("or", left, right, span)
        return left

    def _parse_and(self, no_slash: bool) -> ast.Expr:
        left = self._parse_cmp(no_slash)
        while self._at_keyword("and"):
            span = self._advance().span
            right = self._parse_cmp(no_slash)
            left = ast.Binary("and", left, right, span)
        return left

    def _parse_cmp(self, no_slash: bool) -> ast.Expr:
        left = self._parse_add(no_slash)
        tok = self._current()
        if tok.kind == "symbol" and tok.text in ("<", "<=", ">", ">=", "==", "!="):
            self._advance()
            right = self._parse_add(no_slash)
            return ast.Binary(tok.text, left, right, tok.span)
        return left

    def _parse_add(self, no_slash: bool) -> ast.Expr:
        left = self._parse_mul(no_slash)
        while self._at("symbol", "+") or self._at("symbol", "-"):
            tok = self._advance()
            right = self._parse_mul(no_slash)
            left = ast.Binary(tok.text, left, right, tok.span)
        return left

    def _parse_mul(self, no_slash: bool) -> ast.Expr:
        left = self._parse_unary(no_slash)
        while True:
            if self._at("symbol", "*"):
                tok = self._advance()
                right = self._parse_unary(no_slash)
                left = ast.Binary("*", left, right, tok.span)
            elif not no_slash and self._at("symbol", "/"):
                tok = self._advance()
                right = self._parse_unary(no_slash)
                left = ast.Binary("/", left, right, tok.span)
            else:
                return left

    def _parse_unary(self, no_slash: bool) -> ast.Expr:
        tok = self._current()
        if tok.kind == "symbol" and tok.text in ("!", "-"):
            self._advance()
            operand = self._parse_unary(no_slash)
            if tok.text == "-" and isinstance(operand, ast.IntLit):
                return ast.IntLit(-operand.value, tok.span)
            if tok.text == "-" and isinstance(operand, ast.FloatLit):
                return ast.FloatLit(-operand.value, tok.span)
            return ast.Unary(tok.text, operand, tok.span)
        return self._parse_postfix(no_slash)

    def _parse_postfix(self, no_slash: bool) -> ast.Expr:
        expr = self._parse_primary(no_slash)
        while self._at("symbol", "["):
            span = self._advance().span
            index = self.parse_expr()
            self._expect("symbol", "]")
            expr = ast.Index(expr, index, span)
        return expr

    def _parse_primary(self, no_slash: bool) -> ast.Expr:
        tok = self._current()
        if tok.kind == "int":
            self._advance()
            return ast.IntLit(int(tok.text), tok.span)
        if tok.kind == "float":
            self._advance()
            return ast.FloatLit(float(tok.text), tok.span)
        if self._at_keyword("true", "false"):
            self._advance()
            return ast.BoolLit(tok.text == "true", tok.span)
        if self._at_keyword("fresh"):
            self._advance()
            self._expect("symbol", "(")
            chan = self.parse_expr()
            self._expect("symbol", ")")
            if not isinstance(chan, (ast.Name, ast.Index)):
                raise ParseError("fresh() takes a channel reference", tok.span)
            return ast.Fresh(chan, tok.span)
        if tok.kind == "ident":
            self._advance()
            if self._at("symbol", "("):
                self._advance()
                args: list[ast.Expr] = []
                if not self._at("symbol", ")"):
                    args.append(self.parse_expr())
                    while self._match_symbol(","):
                        args.append(self.parse_expr())
                self._expect("symbol", ")")
                return ast.Call(tok.text, tuple(args), tok.span)
            return ast.Name(tok.text, tok.span)
        if self._match_symbol("("):
            expr = self.parse_expr()  # parentheses re-enable division
            self._expect("symbol", ")")
            return expr
        raise ParseError(f"expected an expression, found {tok.text or tok.kind!r}", tok.span)


def _seq(stmts: list[ast.Stmt], span: SourceSpan) -> ast.Stmt:
    if not stmts:
        return ast.Skip(span)
    if len(stmts) == 1:
        return stmts[0]
    return ast.Seq(tuple(stmts), span)


def _find_entry(modules: list[ast.ModuleDecl]) -> str:
    referenced: set[str] = set()

    def walk(stmt: ast.Stmt) -> None:
        if isinstance(stmt, ast.Run):
            referenced.add(stmt.module)
        elif isinstance(stmt, ast.Seq):
            for s in stmt.stmts:
                walk(s)
        elif isinstance(stmt, ast.Par):
            walk(stmt.left)
            walk(stmt.right)
        elif isinstance(stmt, (ast.Iterate, ast.VarBlock, ast.ChanBlock, ast.Task, ast.Abort)):
            walk(stmt.body)
        elif isinstance(stmt, ast.If):
            walk(stmt.then)
            if stmt.els is not None:
                walk(stmt.els)

    for m in modules:
        walk(m.body)
    candidates = [m.name for m in modules if m.name not in referenced]
    if len(candidates) != 1:
        names = ", ".join(candidates) or "none"
        raise ParseError(
            f"expected exactly one entry module (not run by any other); candidates: {names}",
            modules[0].span,
        )
    return candidates[0]


def parse_text(source: str, filename: str = "<input>") -> ast.SurfaceProgram:
    return Parser(source, filename).parse_program()


def parse_program(path: str) -> ast.SurfaceProgram:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_text(fh.read(), path)
