"""Runtime value domain.

Values are 64-bit signed integers, IEEE-754 doubles, booleans, fixed-size
arrays, opaque host records, and the empty frame. The empty frame is a
distinct singleton; it is not false and it does not participate in
arithmetic.
"""

from __future__ import annotations

import json
from typing import Any

from .diagnostics import RuntimeFault

I64_MIN = -(1 << 63)
I64_MAX = (1 << 63) - 1


class EmptyFrame:
    """The absence of data on a channel for one tick."""

    _instance: "EmptyFrame | None" = None

    def __new__(cls) -> "EmptyFrame":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "empty"

    def __bool__(self) -> bool:
        raise RuntimeFault("empty frame used as a boolean")

    def __reduce__(self):
        return (EmptyFrame, ())


EMPTY = EmptyFrame()


class HostRecord:
    """Opaque record produced by host functions.

    Fields are stored as a sorted tuple of (name, value) pairs so records
    hash and compare structurally.
    """

    __slots__ = ("tag", "fields", "_hash")

    def __init__(self, tag: str, **fields: Any):
        object.__setattr__(self, "tag", tag)
        object.__setattr__(self, "fields", tuple(sorted(fields.items())))
        object.__setattr__(self, "_hash", hash((tag, self.fields)))

    def __setattr__(self, name: str, value: Any) -> None:
        raise AttributeError("host records are immutable")

    def get(self, name: str) -> Any:
        for key, value in self.fields:
            if key == name:
                return value
        raise RuntimeFault(f"host record {self.tag!r} has no field {name!r}")

    def replace(self, **updates: Any) -> "HostRecord":
        merged = dict(self.fields)
        merged.update(updates)
        return HostRecord(self.tag, **merged)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, HostRecord)
            and self.tag == other.tag
            and self.fields == other.fields
        )

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={v!r}" for k, v in self.fields)
        return f"{self.tag}({body})"


Value = Any  # int | float | bool | tuple | HostRecord | EmptyFrame


def is_empty(v: Value) -> bool:
    return v is EMPTY


def wrap_i64(n: int) -> int:
    """Two's-complement wrap into the signed 64-bit range."""
    n &= (1 << 64) - 1
    if n > I64_MAX:
        n -= 1 << 64
    return n


def type_name(v: Value) -> str:
    if v is EMPTY:
        return "empty"
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, float):
        return "float"
    if isinstance(v, tuple):
        return "array"
    if isinstance(v, HostRecord):
        return v.tag
    raise RuntimeFault(f"not a timetide value: {v!r}")


def check_is_value(v: Any) -> Value:
    if v is EMPTY or isinstance(v, (bool, int, float, HostRecord)):
        if isinstance(v, int) and not isinstance(v, bool) and not (I64_MIN <= v <= I64_MAX):
            raise RuntimeFault(f"integer out of 64-bit range: {v}")
        return v
    if isinstance(v, tuple):
        for item in v:
            check_is_value(item)
        return v
    raise RuntimeFault(f"host function returned a non-value: {type(v).__name__}")


def value_to_json(v: Value) -> Any:
    """JSON form used in traces and verdicts. The empty frame maps to null."""
    if v is EMPTY:
        return None
    if isinstance(v, (bool, int, float)):
        return v
    if isinstance(v, tuple):
        return [value_to_json(item) for item in v]
    if isinstance(v, HostRecord):
        return {"$record": v.tag, "fields": {k: value_to_json(x) for k, x in v.fields}}
    raise RuntimeFault(f"not a timetide value: {v!r}")


def value_from_json(obj: Any) -> Value:
    if obj is None:
        return EMPTY
    if isinstance(obj, (bool, int, float)):
        return obj
    if isinstance(obj, list):
        return tuple(value_from_json(item) for item in obj)
    if isinstance(obj, dict) and "$record" in obj:
        fields = {k: value_from_json(x) for k, x in obj.get("fields", {}).items()}
        return HostRecord(obj["$record"], **fields)
    raise RuntimeFault(f"cannot decode value from JSON: {obj!r}")


def canonical_json(v: Value) -> str:
    return json.dumps(value_to_json(v), sort_keys=True, separators=(",", ":"))
