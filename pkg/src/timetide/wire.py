"""Byte encoding for frames crossing node boundaries.

A stream carries the frames of one (channel, writer) pair in tick order.
Each frame is either the single byte 0x00 (an empty frame) or 0x01
followed by a 4-byte little-endian payload length and the payload. A
stream ends with the trailer 0xFF plus one reason byte telling the
receiver whether the writer finished its program or ran out of ticks;
the two endings behave differently at the reader, so the reason must
survive the trip.
"""

from __future__ import annotations

import struct
from typing import Iterator, Union

from .values import EMPTY, HostRecord, Value

FRAME_EMPTY = 0x00
FRAME_DATA = 0x01
FRAME_CLOSE = 0xFF

CLOSE_TERMINATED = 0x01  # writer's program ended; reads drain to empty
CLOSE_LIMIT = 0x02  # writer hit the tick limit; pending reads are cut off

_TAG_INT = 0x01
_TAG_FLOAT = 0x03
_TAG_FALSE = 0x10
_TAG_TRUE = 0x11
_TAG_RECORD = 0x20
_TAG_TUPLE = 0x30


class WireError(ValueError):
    pass


def encode_value(v: Value) -> bytes:
    if isinstance(v, bool):
        return bytes([_TAG_TRUE if v else _TAG_FALSE])
    if isinstance(v, int):
        return bytes([_TAG_INT]) + struct.pack("<q", v)
    if isinstance(v, float):
        return bytes([_TAG_FLOAT]) + struct.pack("<d", v)
    if isinstance(v, tuple):
        out = [bytes([_TAG_TUPLE]), struct.pack("<I", len(v))]
        out.extend(encode_value(item) for item in v)
        return b"".join(out)
    if isinstance(v, HostRecord):
        tag = v.tag.encode("utf-8")
        out = [bytes([_TAG_RECORD]), struct.pack("<H", len(tag)), tag]
        out.append(struct.pack("<H", len(v.fields)))
        for name, item in v.fields:
            nb = name.encode("utf-8")
            out.append(struct.pack("<H", len(nb)))
            out.append(nb)
            out.append(encode_value(item))
        return b"".join(out)
    raise WireError(f"cannot encode {type(v).__name__} onto the wire")


def decode_value(buf: bytes, at: int = 0) -> tuple[Value, int]:
    if at >= len(buf):
        raise WireError("truncated value")
    tag = buf[at]
    at += 1
    if tag == _TAG_TRUE:
        return True, at
    if tag == _TAG_FALSE:
        return False, at
    if tag == _TAG_INT:
        if at + 8 > len(buf):
            raise WireError("truncated integer")
        return struct.unpack_from("<q", buf, at)[0], at + 8
    if tag == _TAG_FLOAT:
        if at + 8 > len(buf):
            raise WireError("truncated float")
        return struct.unpack_from("<d", buf, at)[0], at + 8
    if tag == _TAG_TUPLE:
        (count,) = struct.unpack_from("<I", buf, at)
        at += 4
        items = []
        for _ in range(count):
            item, at = decode_value(buf, at)
            items.append(item)
        return tuple(items), at
    if tag == _TAG_RECORD:
        (tlen,) = struct.unpack_from("<H", buf, at)
        at += 2
        rtag = buf[at : at + tlen].decode("utf-8")
        at += tlen
        (nfields,) = struct.unpack_from("<H", buf, at)
        at += 2
        fields = {}
        for _ in range(nfields):
            (nlen,) = struct.unpack_from("<H", buf, at)
            at += 2
            name = buf[at : at + nlen].decode("utf-8")
            at += nlen
            fields[name], at = decode_value(buf, at)
        return HostRecord(rtag, **fields), at
    raise WireError(f"unknown value tag 0x{tag:02x}")


def encode_frame(v: Value) -> bytes:
    if v is EMPTY:
        return bytes([FRAME_EMPTY])
    payload = encode_value(v)
    return bytes([FRAME_DATA]) + struct.pack("<I", len(payload)) + payload


def encode_close(reason: int) -> bytes:
    if reason not in (CLOSE_TERMINATED, CLOSE_LIMIT):
        raise WireError(f"bad close reason {reason}")
    return bytes([FRAME_CLOSE, reason])


Event = Union[tuple[str, Value], tuple[str, int]]  # ("frame", v) | ("close", reason)


class FrameDecoder:
    """Incremental decoder; feed arbitrary byte chunks, collect events."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self.closed = False

    def feed(self, chunk: bytes) -> list[Event]:
        self._buf.extend(chunk)
        events: list[Event] = []
        while self._buf:
            head = self._buf[0]
            if head == FRAME_EMPTY:
                del self._buf[0]
                events.append(("frame", EMPTY))
            elif head == FRAME_DATA:
                if len(self._buf) < 5:
                    break
                (size,) = struct.unpack_from("<I", self._buf, 1)
                if len(self._buf) < 5 + size:
                    break
                payload = bytes(self._buf[5 : 5 + size])
                del self._buf[: 5 + size]
                value, used = decode_value(payload)
                if used != size:
                    raise WireError("payload has trailing bytes")
                events.append(("frame", value))
            elif head == FRAME_CLOSE:
                if len(self._buf) < 2:
                    break
                reason = self._buf[1]
                del self._buf[:2]
                if reason not in (CLOSE_TERMINATED, CLOSE_LIMIT):
                    raise WireError(f"bad close reason {reason}")
                self.closed = True
                events.append(("close", reason))
            else:
                raise WireError(f"unknown frame marker 0x{head:02x}")
        return events


def roundtrip(v: Value) -> Value:
    """Encode then decode one value; test helper and sanity check."""
    out, used = decode_value(encode_value(v))
    if used != len(encode_value(v)):
        raise WireError("roundtrip left trailing bytes")
    return out
