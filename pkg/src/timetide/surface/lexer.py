"""Tokenizer for the surface language."""

from __future__ import annotations

from dataclasses import dataclass

from ..diagnostics import ParseError, SourceSpan

KEYWORDS = {
    "module", "end", "input", "output", "const", "channel", "chan", "delay",
    "in", "run", "foreach", "pareach", "var", "task", "abort", "weak", "when",
    "immediate", "if", "else", "send", "fresh", "and", "or", "true", "false",
}

# Longest first so ":=" wins over ":" and "<>" over "<".
SYMBOLS = [
    "<>", ":=", "==", "!=", "<=", ">=",
    "(", ")", "{", "}", "[", "]", ":", ";", ",", "/", "=",
    "<", ">", "+", "-", "*", "!", ".",
]


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", "int", "float", "keyword", "symbol", "eof"
    text: str
    span: SourceSpan


class Lexer:
    def __init__(self, source: str, filename: str = "<input>"):
        self.source = source
        self.filename = filename
        self.pos = 0
        self.line = 1
        self.col = 1

    def _span(self, start_line: int, start_col: int) -> SourceSpan:
        return SourceSpan(start_line, start_col, self.line, self.col, self.filename)

    def _advance(self, n: int = 1) -> None:
        for _ in range(n):
            if self.pos < len(self.source) and self.source[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def _peek(self, offset: int = 0) -> str:
        i = self.pos + offset
        return self.source[i] if i < len(self.source) else ""

    def _skip_trivia(self) -> None:
        while self.pos < len(self.source):
            ch = self.source[self.pos]
            if ch in " \t\r\n":
                self._advance()
            elif ch == "/" and self._peek(1) == "/":
                while self.pos < len(self.source) and self.source[self.pos] != "\n":
                    self._advance()
            elif ch == "/" and self._peek(1) == "*":
                start = SourceSpan(self.line, self.col, filename=self.filename)
                self._advance(2)
                while not (self._peek() == "*" and self._peek(1) == "/"):
                    if self.pos >= len(self.source):
                        raise ParseError("unterminated block comment", start)
                    self._advance()
                self._advance(2)
            else:
                return

    def tokens(self) -> list[Token]:
        out: list[Token] = []
        while True:
            tok = self.next_token()
            out.append(tok)
            if tok.kind == "eof":
                return out

    def next_token(self) -> Token:
        self._skip_trivia()
        line, col = self.line, self.col
        if self.pos >= len(self.source):
            return Token("eof", "", self._span(line, col))
        ch = self.source[self.pos]

        if ch.isalpha() or ch == "_":
            start = self.pos
            while self._peek().isalnum() or self._peek() == "_":
                self._advance()
            text = self.source[start:self.pos]
            kind = "keyword" if text in KEYWORDS else "ident"
            return Token(kind, text, self._span(line, col))

        if ch.isdigit():
            start = self.pos
            while self._peek().isdigit():
                self._advance()
            is_float = False
            if self._peek() == "." and self._peek(1).isdigit():
                is_float = True
                self._advance()
                while self._peek().isdigit():
                    self._advance()
            if self._peek() in "eE" and (
                self._peek(1).isdigit()
                or (self._peek(1) in "+-" and self._peek(2).isdigit())
            ):
                is_float = True
                self._advance()
                if self._peek() in "+-":
                    self._advance()
                while self._peek().isdigit():
                    self._advance()
            text = self.source[start:self.pos]
            return Token("float" if is_float else "int", text, self._span(line, col))

        for sym in SYMBOLS:
            if self.source.startswith(sym, self.pos):
                self._advance(len(sym))
                return Token("symbol", sym, self._span(line, col))

        raise ParseError(f"unexpected character {ch!r}", self._span(line, col))
