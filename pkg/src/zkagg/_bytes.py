"""Small helpers shared by the binary file formats.

All multi-byte integers are big-endian unless a format says otherwise.
Big integers are written as a 4-byte length followed by the magnitude;
a sign is never needed except where a format states it explicitly.
"""

from __future__ import annotations

import io
import struct


class FormatError(ValueError):
    """Raised when a byte string does not parse as the expected format."""


def int_to_bytes(x: int, width: int | None = None) -> bytes:
    x = int(x)
    if x < 0:
        raise ValueError("negative integer in unsigned field")
    if width is None:
        width = max(1, (x.bit_length() + 7) // 8)
    return x.to_bytes(width, "big")


def write_bigint(buf: io.BytesIO, x: int) -> None:
    raw = int_to_bytes(x)
    buf.write(struct.pack(">I", len(raw)))
    buf.write(raw)


def write_signed_bigint(buf: io.BytesIO, x: int) -> None:
    x = int(x)
    buf.write(b"\x01" if x < 0 else b"\x00")
    write_bigint(buf, abs(x))


def read_exact(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise FormatError(f"truncated input: wanted {n} bytes, got {len(data)}")
    return data


def read_u8(buf: io.BytesIO) -> int:
    return read_exact(buf, 1)[0]


def read_u32(buf: io.BytesIO) -> int:
    return struct.unpack(">I", read_exact(buf, 4))[0]


def read_u64(buf: io.BytesIO) -> int:
    return struct.unpack(">Q", read_exact(buf, 8))[0]


def read_bigint(buf: io.BytesIO) -> int:
    n = read_u32(buf)
    return int.from_bytes(read_exact(buf, n), "big")


def read_signed_bigint(buf: io.BytesIO) -> int:
    neg = read_u8(buf)
    v = read_bigint(buf)
    return -v if neg else v


def expect_magic(buf: io.BytesIO, magic: bytes, version: int) -> None:
    got = read_exact(buf, len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    v = read_u8(buf)
    if v != version:
        raise FormatError(f"unsupported version {v}")


def expect_end(buf: io.BytesIO) -> None:
    if buf.read(1):
        raise FormatError("trailing bytes after record")
