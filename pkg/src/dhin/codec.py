"""Canonical byte encoding shared by signatures, state roots and contract args.

Every value is a one-byte tag followed by a fixed-width or length-prefixed
body. Integers are 8-byte big-endian two's complement, lengths are 4-byte
big-endian, dict entries are ordered by their encoded key. The encoding is a
bijection on the supported value space: ``decode`` is strict and rejects
trailing bytes, unknown tags, non-canonical dict order and malformed text.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import struct
from typing import Any

INT_MIN = -(1 << 63)
INT_MAX = (1 << 63) - 1

_NONE = b"N"
_TRUE = b"T"
_FALSE = b"F"
_INT = b"i"
_FLOAT = b"f"
_BYTES = b"b"
_STR = b"s"
_LIST = b"l"
_DICT = b"d"
_DID = b"D"
_STRUCT = b"S"


class DecodeError(ValueError):
    pass


def digest(data: bytes) -> bytes:
    """32-byte content digest used throughout (SHA-256)."""
    return hashlib.sha256(data).digest()


def _len(n: int) -> bytes:
    return struct.pack(">I", n)


def encode(value: Any) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value: Any, out: bytearray) -> None:
    # bool before int: bool is an int subclass
    if value is None:
        out += _NONE
    elif value is True:
        out += _TRUE
    elif value is False:
        out += _FALSE
    elif isinstance(value, enum.Enum):
        _encode_into(value.name, out)
    elif isinstance(value, int):
        if not INT_MIN <= value <= INT_MAX:
            raise OverflowError(f"integer {value} outside signed 64-bit range")
        out += _INT
        out += struct.pack(">q", value)
    elif isinstance(value, float):
        out += _FLOAT
        out += struct.pack(">d", value)
    elif isinstance(value, (bytes, bytearray, memoryview)):
        raw = bytes(value)
        out += _BYTES
        out += _len(len(raw))
        out += raw
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out += _STR
        out += _len(len(raw))
        out += raw
    elif isinstance(value, (list, tuple)):
        out += _LIST
        out += _len(len(value))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        pairs = sorted((encode(k), encode(v)) for k, v in value.items())
        out += _DICT
        out += _len(len(pairs))
        for k, v in pairs:
            out += k
            out += v
    elif isinstance(value, (set, frozenset)):
        items = sorted(encode(v) for v in value)
        out += _LIST
        out += _len(len(items))
        for item in items:
            out += item
    elif getattr(value, "__canonical_did__", False):
        out += _DID
        out += value.id
    elif hasattr(value, "canonical"):
        _encode_into(value.canonical(), out)
    elif dataclasses.is_dataclass(value):
        out += _STRUCT
        name = type(value).__name__.encode()
        out += _len(len(name))
        out += name
        fields = dataclasses.fields(value)
        out += _len(len(fields))
        for f in fields:
            _encode_into(getattr(value, f.name), out)
    else:
        raise TypeError(f"cannot canonically encode {type(value).__name__}")


def decode(data: bytes) -> Any:
    value, pos = _decode_at(memoryview(data), 0)
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes")
    return value


def _take(buf: memoryview, pos: int, n: int) -> tuple[bytes, int]:
    end = pos + n
    if end > len(buf):
        raise DecodeError("truncated input")
    return bytes(buf[pos:end]), end


def _decode_at(buf: memoryview, pos: int) -> tuple[Any, int]:
    tag, pos = _take(buf, pos, 1)
    if tag == _NONE:
        return None, pos
    if tag == _TRUE:
        return True, pos
    if tag == _FALSE:
        return False, pos
    if tag == _INT:
        raw, pos = _take(buf, pos, 8)
        return struct.unpack(">q", raw)[0], pos
    if tag == _FLOAT:
        raw, pos = _take(buf, pos, 8)
        return struct.unpack(">d", raw)[0], pos
    if tag in (_BYTES, _STR):
        raw, pos = _take(buf, pos, 4)
        body, pos = _take(buf, pos, struct.unpack(">I", raw)[0])
        if tag == _BYTES:
            return body, pos
        try:
            return body.decode("utf-8"), pos
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8") from exc
    if tag == _LIST:
        raw, pos = _take(buf, pos, 4)
        items = []
        for _ in range(struct.unpack(">I", raw)[0]):
            item, pos = _decode_at(buf, pos)
            items.append(item)
        return items, pos
    if tag == _DICT:
        raw, pos = _take(buf, pos, 4)
        result: dict = {}
        previous = None
        for _ in range(struct.unpack(">I", raw)[0]):
            start = pos
            key, pos = _decode_at(buf, pos)
            key_bytes = bytes(buf[start:pos])
            if previous is not None and key_bytes <= previous:
                raise DecodeError("dict keys not in canonical order")
            previous = key_bytes
            if isinstance(key, list):
                key = _freeze(key)
            value, pos = _decode_at(buf, pos)
            result[key] = value
        return result, pos
    if tag == _DID:
        raw, pos = _take(buf, pos, 32)
        from dhin.identity import Did

        return Did(raw), pos
    raise DecodeError(f"unknown tag {tag!r}")


def _freeze(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value
