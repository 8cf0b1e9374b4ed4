"""Timetide: a logically synchronous programming language.

The package is organised as a pipeline: surface syntax is parsed into an
AST (`timetide.surface`), desugared into a small kernel calculus
(`timetide.desugar`, `timetide.kernel`), executed either by a centralised
interpreter (`timetide.central`) or on a distributed logical synchrony
network (`timetide.runtime`), and checked by the verification harness
(`timetide.verify`).
"""

__version__ = "0.1.0"
