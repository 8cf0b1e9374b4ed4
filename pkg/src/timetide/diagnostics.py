"""Diagnostics and source positions shared by every pipeline stage."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class SourceSpan:
    """Half-open region of a source file, 1-based lines and columns."""

    line: int = 0
    col: int = 0
    end_line: int = 0
    end_col: int = 0
    filename: str = "<input>"

    def __str__(self) -> str:
        return f"{self.filename}:{self.line}:{self.col}"


NO_SPAN = SourceSpan()


@dataclass
class Diagnostic:
    severity: str  # "error" or "warning"
    message: str
    span: SourceSpan = NO_SPAN

    def __str__(self) -> str:
        return f"{self.span}: {self.severity}: {self.message}"


class TimetideError(Exception):
    """Base class for all user-facing failures."""


class ParseError(TimetideError):
    def __init__(self, message: str, span: SourceSpan = NO_SPAN):
        super().__init__(f"{span}: {message}")
        self.message = message
        self.span = span


class ValidationError(TimetideError):
    """Raised when a program is rejected; carries the full diagnostic list."""

    def __init__(self, diagnostics: "list[Diagnostic] | str"):
        if isinstance(diagnostics, str):
            diagnostics = [Diagnostic("error", diagnostics)]
        self.diagnostics = diagnostics
        text = "; ".join(str(d) for d in diagnostics if d.severity == "error")
        super().__init__(text or "validation failed")


class LoweringError(TimetideError):
    def __init__(self, message: str, span: SourceSpan = NO_SPAN):
        super().__init__(f"{span}: {message}")
        self.message = message
        self.span = span


class RuntimeFault(TimetideError):
    """A program fault observed while executing kernel code."""

    def __init__(self, message: str, thread: str | None = None, theta: int | None = None):
        detail = message
        if thread is not None:
            detail = f"[{thread} @ {theta}] {message}"
        super().__init__(detail)
        self.message = message
        self.thread = thread
        self.theta = theta


class DeadlockError(TimetideError):
    """A cycle of threads each blocked on another; impossible for valid programs."""


class SchedulerBug(TimetideError):
    """Internal invariant broken inside the scheduler itself."""


@dataclass
class DiagnosticSink:
    """Accumulates diagnostics; raises at the end if any error was recorded."""

    diagnostics: list[Diagnostic] = field(default_factory=list)

    def error(self, message: str, span: SourceSpan = NO_SPAN) -> None:
        self.diagnostics.append(Diagnostic("error", message, span))

    def warning(self, message: str, span: SourceSpan = NO_SPAN) -> None:
        self.diagnostics.append(Diagnostic("warning", message, span))

    @property
    def has_errors(self) -> bool:
        return any(d.severity == "error" for d in self.diagnostics)

    def raise_if_errors(self) -> None:
        if self.has_errors:
            raise ValidationError(self.diagnostics)
