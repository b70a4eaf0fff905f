"""Pedersen commitments in the order-q subgroup of Z*_P.

A long integer vector is committed chunk by chunk: consecutive ``b``-bit
slots are packed into one element of Z_q (same slot layout as
:mod:`zkagg.encoding`), and each chunk gets its own ``g^m h^r``. Since a
chunk stays below ``2^(bits(q)-1)`` even after summing all users' slots,
the product of users' commitments opens to the slot-wise sum.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import gmpy2
import numpy as np
from gmpy2 import mpz

from . import _bytes
from ._fixedbase import FixedBase
from ._rand import HashDrbg, make_rng

DEFAULT_P_BITS = 2048
DEFAULT_Q_BITS = 256


@dataclass(frozen=True)
class PedersenParams:
    P: int
    q: int
    g: int
    h: int = field(repr=False)

    def __post_init__(self):
        if (self.P - 1) % self.q:
            raise ValueError("q must divide P - 1")
        for x in (self.g, self.h):
            if x in (0, 1) or pow(x, self.q, self.P) != 1:
                raise ValueError("generator not in the order-q subgroup")

    @property
    def element_bytes(self) -> int:
        return (self.P.bit_length() + 7) // 8

    def chunk_slots(self, b: int) -> int:
        """b-bit slots per Z_q chunk, keeping one spare bit below q."""
        return (self.q.bit_length() - 1) // b


def _hash_to_subgroup(P: mpz, q: mpz, label: bytes) -> mpz:
    cof = (P - 1) // q
    ctr = 0
    while True:
        raw = hashlib.shake_256(label + ctr.to_bytes(4, "big")).digest(P.bit_length() // 8 + 16)
        x = gmpy2.powmod(mpz(int.from_bytes(raw, "big")) % P, cof, P)
        if x != 1:
            return x
        ctr += 1


def generate_params(p_bits: int = DEFAULT_P_BITS, q_bits: int = DEFAULT_Q_BITS, seed=b"zkagg-pedersen") -> PedersenParams:
    """P = k q + 1 prime; g from the seed, h hashed from (P, q, g)."""
    if q_bits >= p_bits:
        raise ValueError("q must be shorter than P")
    rng = make_rng(seed)
    while True:
        q = mpz(rng.getrandbits(q_bits)) | (mpz(1) << (q_bits - 1)) | 1
        if gmpy2.is_prime(q, 40):
            break
    while True:
        k = mpz(rng.getrandbits(p_bits - q_bits)) | (mpz(1) << (p_bits - q_bits - 1))
        k -= k % 2
        P = k * q + 1
        if P.bit_length() == p_bits and gmpy2.is_prime(P, 40):
            break
    cof = (P - 1) // q
    while True:
        g = gmpy2.powmod(mpz(rng.randrange(2, int(P) - 1)), cof, P)
        if g != 1:
            break
    label = b"zkagg-pedersen-h" + b"".join(_bytes.int_to_bytes(v) for v in (P, q, g))
    h = _hash_to_subgroup(P, q, label)
    return PedersenParams(int(P), int(q), int(g), int(h))


@lru_cache(maxsize=8)
def default_params(p_bits: int = DEFAULT_P_BITS, q_bits: int = DEFAULT_Q_BITS) -> PedersenParams:
    return generate_params(p_bits, q_bits, seed=f"zkagg-pedersen-{p_bits}-{q_bits}".encode())


@lru_cache(maxsize=16)
def _tables(params: PedersenParams) -> tuple[FixedBase, FixedBase]:
    bits = params.q.bit_length()
    return FixedBase(params.g, params.P, bits), FixedBase(params.h, params.P, bits)


@dataclass(frozen=True)
class CommitmentVector:
    elements: tuple[int, ...]
    chunk_bits: int
    P: int = field(repr=False)

    def __len__(self) -> int:
        return len(self.elements)


@dataclass(frozen=True)
class Opening:
    r: tuple[int, ...]
    chunks: tuple[int, ...]

    def __post_init__(self):
        if len(self.r) != len(self.chunks):
            raise ValueError("opening vectors differ in length")


def in_subgroup(params: PedersenParams, e: int) -> bool:
    return 0 < e < params.P and gmpy2.powmod(e, params.q, params.P) == 1


def commit_one(params: PedersenParams, m: int, r: int) -> int:
    tg, th = _tables(params)
    return int(tg.pow(m % params.q) * th.pow(r % params.q) % params.P)


def commit(params: PedersenParams, chunks, r, chunk_bits: int = 0) -> CommitmentVector:
    chunks, r = list(chunks), list(r)
    if len(chunks) != len(r):
        raise ValueError("chunks and randomness differ in length")
    for c in chunks:
        if not 0 <= c < params.q:
            raise ValueError("chunk value outside Z_q")
    return CommitmentVector(tuple(commit_one(params, m, ri) for m, ri in zip(chunks, r)), chunk_bits, params.P)


def verify_open(params: PedersenParams, cv: CommitmentVector, chunks, r) -> bool:
    chunks, r = list(chunks), list(r)
    if not (len(chunks) == len(r) == len(cv.elements)) or cv.P != params.P:
        return False
    return all(commit_one(params, m, ri) == e for m, ri, e in zip(chunks, r, cv.elements))


def combine(cvs) -> CommitmentVector:
    cvs = list(cvs)
    if not cvs:
        raise ValueError("nothing to combine")
    first = cvs[0]
    for cv in cvs[1:]:
        if len(cv) != len(first) or cv.P != first.P:
            raise ValueError("commitment vectors differ in length or group")
    P = mpz(first.P)
    out = [mpz(e) for e in first.elements]
    for cv in cvs[1:]:
        out = [a * b % P for a, b in zip(out, cv.elements)]
    return CommitmentVector(tuple(int(e) for e in out), first.chunk_bits, first.P)


def random_r(params: PedersenParams, count: int, rng=None) -> list[int]:
    rng = make_rng(rng)
    return [rng.randrange(params.q) for _ in range(count)]


def sum_r(rs, q: int) -> list[int]:
    rs = list(rs)
    return [sum(col) % q for col in zip(*rs)] if rs else []


# --------------------------------------------------------------------------
# vector <-> chunks


def chunk_count(m: int, params: PedersenParams, b: int) -> int:
    return -(-m // params.chunk_slots(b))


def chunk_vector(x, params: PedersenParams, b: int) -> list[int]:
    """Pack b-bit slots of ``x`` into Z_q elements."""
    per = params.chunk_slots(b)
    if per < 1:
        raise ValueError("slot width exceeds the group order")
    xs = [int(v) for v in np.asarray(x).ravel()] if not isinstance(x, list) else [int(v) for v in x]
    out = []
    for lo in range(0, len(xs), per):
        acc = 0
        for v in reversed(xs[lo:lo + per]):
            if not 0 <= v < 1 << b:
                raise ValueError("slot value does not fit in b bits")
            acc = (acc << b) | v
        out.append(acc)
    return out


def unchunk(chunks, params: PedersenParams, b: int, m: int) -> list[int]:
    per = params.chunk_slots(b)
    mask = (1 << b) - 1
    out = []
    for c in chunks:
        for _ in range(per):
            out.append(c & mask)
            c >>= b
    return out[:m]


# --------------------------------------------------------------------------
# serialization


def commitment_to_bytes(cv: CommitmentVector) -> bytes:
    width = (cv.P.bit_length() + 7) // 8
    return struct.pack(">I", len(cv)) + b"".join(int(e).to_bytes(width, "big") for e in cv.elements)


def commitment_from_bytes(data: bytes, params: PedersenParams, chunk_bits: int = 0) -> CommitmentVector:
    buf = io.BytesIO(data)
    count = _bytes.read_u32(buf)
    width = params.element_bytes
    elems = []
    for _ in range(count):
        e = int.from_bytes(_bytes.read_exact(buf, width), "big")
        if not 0 < e < params.P:
            raise _bytes.FormatError("group element out of range")
        elems.append(e)
    _bytes.expect_end(buf)
    return CommitmentVector(tuple(elems), chunk_bits, params.P)


def params_to_bytes(params: PedersenParams) -> bytes:
    buf = io.BytesIO()
    buf.write(b"ZKPC\x01")
    for v in (params.P, params.q, params.g, params.h):
        _bytes.write_bigint(buf, v)
    return buf.getvalue()


def params_from_bytes(data: bytes) -> PedersenParams:
    buf = io.BytesIO(data)
    _bytes.expect_magic(buf, b"ZKPC", 1)
    P, q, g, h = (_bytes.read_bigint(buf) for _ in range(4))
    _bytes.expect_end(buf)
    return PedersenParams(P, q, g, h)
