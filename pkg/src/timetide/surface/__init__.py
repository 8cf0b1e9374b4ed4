"""Surface syntax: AST, lexer, parser, printer, constant resolution, validation."""

from .ast import SurfaceProgram  # noqa: F401
from .parser import parse_program, parse_text  # noqa: F401
from .printer import pretty_print  # noqa: F401
from .resolve import resolve_constants  # noqa: F401
from .validate import validate  # noqa: F401
