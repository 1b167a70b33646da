"""Canonical byte encoding shared by every hashed or persisted record.

A record is a sequence of fields, each written as a 4-byte big-endian length
followed by the field bytes. Nested records and lists are simply framed
byte strings placed inside another frame. Integers are fixed-width
big-endian, reals are IEEE-754 binary64 big-endian, strings are UTF-8 and
instants are signed 64-bit microseconds since the Unix epoch.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from datetime import datetime, timedelta, timezone
from typing import Iterable

_LEN = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
ZERO_HASH = "0" * 64


class DecodeError(ValueError):
    pass


def frame(*fields: bytes) -> bytes:
    return b"".join(_LEN.pack(len(f)) + f for f in fields)


def frame_list(items: Iterable[bytes]) -> bytes:
    return frame(*items)


def unframe(data: bytes, count: int | None = None) -> list[bytes]:
    """Split a framed record; the whole buffer must be consumed."""
    fields = []
    pos = 0
    view = memoryview(data)
    while pos < len(data):
        if pos + 4 > len(data):
            raise DecodeError("truncated length prefix")
        (n,) = _LEN.unpack_from(view, pos)
        pos += 4
        if pos + n > len(data):
            raise DecodeError("field overruns buffer")
        fields.append(bytes(view[pos : pos + n]))
        pos += n
    if count is not None and len(fields) != count:
        raise DecodeError(f"expected {count} fields, found {len(fields)}")
    return fields


def u64(n: int) -> bytes:
    return _U64.pack(n)


def i64(n: int) -> bytes:
    return _I64.pack(n)


def f64(x: float) -> bytes:
    return _F64.pack(x)


def text(s: str) -> bytes:
    return s.encode("utf-8")


def flag(b: bool) -> bytes:
    return b"\x01" if b else b"\x00"


def optional(value: bytes | None) -> bytes:
    """Encode a possibly-absent field as a 0- or 1-element list."""
    return frame() if value is None else frame(value)


def read_u64(b: bytes) -> int:
    if len(b) != 8:
        raise DecodeError("u64 field must be 8 bytes")
    return _U64.unpack(b)[0]


def read_i64(b: bytes) -> int:
    if len(b) != 8:
        raise DecodeError("i64 field must be 8 bytes")
    return _I64.unpack(b)[0]


def read_f64(b: bytes) -> float:
    if len(b) != 8:
        raise DecodeError("f64 field must be 8 bytes")
    return _F64.unpack(b)[0]


def read_text(b: bytes) -> str:
    try:
        return b.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(str(exc)) from None


def read_flag(b: bytes) -> bool:
    if b not in (b"\x00", b"\x01"):
        raise DecodeError("flag must be 0x00 or 0x01")
    return b == b"\x01"


def read_optional(b: bytes) -> bytes | None:
    items = unframe(b)
    if len(items) > 1:
        raise DecodeError("optional field holds more than one value")
    return items[0] if items else None


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def is_hex_digest(s: object) -> bool:
    return (
        isinstance(s, str)
        and len(s) == 64
        and all(c in "0123456789abcdef" for c in s)
    )


def to_micros(t: datetime) -> int:
    if t.tzinfo is None:
        raise ValueError("naive datetime; UTC instants only")
    delta = t - EPOCH
    return (delta.days * 86_400 + delta.seconds) * 1_000_000 + delta.microseconds


def from_micros(us: int) -> datetime:
    return EPOCH + timedelta(microseconds=us)


def iso_micros(us: int) -> str:
    return from_micros(us).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


class SystemClock:
    def now_micros(self) -> int:
        return to_micros(datetime.now(timezone.utc))


class LogicalClock:
    """Strictly increasing fake clock for reproducible chains.

    Each reading advances by ``step_us``; ``advance_past`` lets a reopened
    node continue after the last committed instant.
    """

    def __init__(self, start_us: int = 1_700_000_000_000_000, step_us: int = 1):
        self._next = start_us
        self._step = step_us
        self._lock = threading.Lock()

    def now_micros(self) -> int:
        with self._lock:
            value = self._next
            self._next += self._step
            return value

    def advance_past(self, us: int) -> None:
        with self._lock:
            self._next = max(self._next, us + self._step)
