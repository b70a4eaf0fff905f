"""Recorded message transcripts and the channels that produce or replay them.

File layout: ``b"ZKTR"`` + version byte, then records. Each record is a
4-byte big-endian length followed by

    sender (int32) || recipient (int32) || tag length (u8) || tag (ascii)
    || payload length (u32) || payload

Party ids are user indices; the server is ``SERVER = -1``. A request and
its reply are two consecutive records. A missing reply (a user that is
offline or refuses) is recorded with the tag ``"none"`` and an empty
payload.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import _bytes

SERVER = -1
NO_REPLY = "none"
_MAGIC = b"ZKTR"
_VERSION = 1


@dataclass(frozen=True)
class Record:
    sender: int
    recipient: int
    tag: str
    payload: bytes


class ReplayMismatch(RuntimeError):
    """The server asked for something the recorded transcript does not contain."""


def record_to_bytes(rec: Record) -> bytes:
    tag = rec.tag.encode("ascii")
    body = struct.pack(">iiB", rec.sender, rec.recipient, len(tag)) + tag
    body += struct.pack(">I", len(rec.payload)) + rec.payload
    return struct.pack(">I", len(body)) + body


def transcript_to_bytes(records) -> bytes:
    return _MAGIC + bytes([_VERSION]) + b"".join(record_to_bytes(r) for r in records)


def transcript_from_bytes(data: bytes) -> list[Record]:
    buf = io.BytesIO(data)
    _bytes.expect_magic(buf, _MAGIC, _VERSION)
    out = []
    while buf.tell() < len(data):
        body = io.BytesIO(_bytes.read_exact(buf, _bytes.read_u32(buf)))
        sender, recipient, tlen = struct.unpack(">iiB", _bytes.read_exact(body, 9))
        tag = _bytes.read_exact(body, tlen).decode("ascii")
        payload = _bytes.read_exact(body, _bytes.read_u32(body))
        _bytes.expect_end(body)
        out.append(Record(sender, recipient, tag, payload))
    return out


def save_transcript(records, path) -> None:
    Path(path).write_bytes(transcript_to_bytes(records))


def load_transcript(path) -> list[Record]:
    return transcript_from_bytes(Path(path).read_bytes())


class LiveChannel:
    """Delivers server requests to in-process user handlers, in call order."""

    def __init__(self, handlers: dict[int, Callable[[str, bytes], bytes | None]]):
        self.handlers = handlers
        self.records: list[Record] = []

    def request(self, user: int, tag: str, payload: bytes = b"") -> bytes | None:
        self.records.append(Record(SERVER, user, tag, payload))
        handler = self.handlers.get(user)
        reply = handler(tag, payload) if handler is not None else None
        if reply is None:
            self.records.append(Record(user, SERVER, NO_REPLY, b""))
        else:
            self.records.append(Record(user, SERVER, tag, reply))
        return reply

    def announce(self, tag: str, payload: bytes) -> None:
        self.records.append(Record(SERVER, SERVER, tag, payload))


class ReplayChannel:
    """Feeds recorded replies back; every request must match the record."""

    def __init__(self, records):
        self.records = list(records)
        self.pos = 0

    def _next(self) -> Record:
        if self.pos >= len(self.records):
            raise ReplayMismatch("transcript exhausted")
        rec = self.records[self.pos]
        self.pos += 1
        return rec

    def request(self, user: int, tag: str, payload: bytes = b"") -> bytes | None:
        req = self._next()
        if (req.sender, req.recipient, req.tag, req.payload) != (SERVER, user, tag, payload):
            raise ReplayMismatch(f"expected request {req.tag!r} to {req.recipient}, got {tag!r} to {user}")
        rep = self._next()
        if rep.sender != user or rep.recipient != SERVER:
            raise ReplayMismatch("reply out of order")
        return None if rep.tag == NO_REPLY else rep.payload

    def announce(self, tag: str, payload: bytes) -> None:
        rec = self._next()
        if (rec.sender, rec.tag, rec.payload) != (SERVER, tag, payload):
            raise ReplayMismatch(f"announcement {tag!r} differs from the record")

    def finished(self) -> bool:
        return self.pos == len(self.records)
