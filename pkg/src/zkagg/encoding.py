"""Compressing integer vectors into few ciphertexts.

Two encodings are provided:

* Polynomial packing: slot ``i`` of the vector occupies bits
  ``[i*b, (i+1)*b)`` of one big integer, so adding two packed integers adds
  the vectors slot-wise as long as no slot carries. ``slack_bits`` reserves
  the headroom for summing ``n_users`` vectors.
* KEM-DEM: the user sends ``E(k)`` once plus the vector masked with an
  affine keystream ``ks_i = k * (IV || i) mod p``. The server rebuilds
  per-slot ciphertexts homomorphically without learning ``k``.

The packed vector may be longer than one ciphertext holds at the key's
level; it is then split into consecutive segments.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import gmpy2
import numpy as np

from . import _bytes
from . import he
from ._rand import make_rng

KEM_L_DEFAULT = 64
IV_BITS = 64
INDEX_BITS = 32


@dataclass(frozen=True)
class PackingParams:
    element_bits: int
    vector_len: int
    range_bound: int
    slack_bits: int

    def __post_init__(self):
        if self.range_bound < 1 or self.vector_len < 0 or self.slack_bits < 0:
            raise ValueError("invalid packing parameters")
        if self.element_bits != _value_bits(self.range_bound) + self.slack_bits:
            raise ValueError("element_bits must be ceil(log2 range_bound) + slack_bits")

    @classmethod
    def for_users(cls, vector_len: int, range_bound: int, n_users: int) -> "PackingParams":
        slack = max(0, math.ceil(math.log2(n_users))) if n_users > 1 else 0
        return cls(_value_bits(range_bound) + slack, vector_len, range_bound, slack)

    @property
    def total_bits(self) -> int:
        return self.vector_len * self.element_bits

    @property
    def value_limit(self) -> int:
        """Per-user elements must lie below this."""
        return 1 << (self.element_bits - self.slack_bits)


def _value_bits(range_bound: int) -> int:
    return max(1, (range_bound - 1).bit_length())


def choose_level(m: int, b: int, key_bits: int) -> int:
    """Smallest s with s * key_bits >= m * b."""
    if m <= 0 or b <= 0 or key_bits <= 0:
        raise ValueError("arguments must be positive")
    return max(1, -(-m * b // key_bits))


def expansion_factor(ciphertext_bytes: int, m: int, element_bytes: int = 3) -> float:
    return ciphertext_bytes / (m * element_bytes)


def slots_per_ciphertext(pk: he.HePublicKey, b: int) -> int:
    """Slots that fit below n^s; n^s > 2^(s*(bits(n)-1))."""
    return pk.s * (pk.n.bit_length() - 1) // b


def _as_array(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError("expected a one-dimensional vector")
    if arr.dtype == object or arr.size == 0:
        return np.array([int(v) for v in arr], dtype=np.int64)
    return arr.astype(np.int64, copy=False)


def _pack_bits(arr: np.ndarray, b: int) -> int:
    if arr.size == 0:
        return 0
    shifts = np.arange(b, dtype=np.uint64)
    bits = ((arr.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    raw = np.packbits(bits.ravel(), bitorder="little").tobytes()
    return int.from_bytes(raw, "little")


def _unpack_bits(v: int, m: int, b: int) -> np.ndarray:
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    nbytes = (m * b + 7) // 8
    raw = np.frombuffer(int(v).to_bytes(nbytes, "little"), dtype=np.uint8)
    bits = np.unpackbits(raw, bitorder="little")[: m * b].reshape(m, b).astype(np.int64)
    if b <= 62:
        return bits @ (np.int64(1) << np.arange(b, dtype=np.int64))
    weights = [1 << i for i in range(b)]
    return np.array([sum(w for w, bit in zip(weights, row) if bit) for row in bits], dtype=object)


def _checked(x, params: PackingParams) -> np.ndarray:
    arr = _as_array(x)
    if arr.size != params.vector_len:
        raise ValueError(f"vector length {arr.size} != {params.vector_len}")
    if arr.size and (arr.min() < 0 or arr.max() >= params.value_limit):
        raise ValueError(f"element outside [0, 2^{params.element_bits - params.slack_bits})")
    return arr


def pack(x, params: PackingParams, *, capacity_bits: int | None = None) -> int:
    """sum_i x_i * 2^(i*b)."""
    arr = _checked(x, params)
    if capacity_bits is not None and params.total_bits > capacity_bits:
        raise ValueError("vector does not fit the plaintext space")
    return _pack_bits(arr, params.element_bits)


def unpack(v: int, params: PackingParams) -> np.ndarray:
    if v < 0 or v >> params.total_bits:
        raise ValueError("packed value exceeds capacity")
    return _unpack_bits(v, params.vector_len, params.element_bits)


# --------------------------------------------------------------------------
# segmented packing + encryption


def segment_bounds(params: PackingParams, slots: int) -> list[tuple[int, int]]:
    if slots < 1:
        raise ValueError("key too small for even one slot")
    m = params.vector_len
    return [(i, min(i + slots, m)) for i in range(0, max(m, 1), slots)] if m else []


def _segment_params(params: PackingParams, length: int) -> PackingParams:
    return PackingParams(params.element_bits, length, params.range_bound, params.slack_bits)


def pack_encrypt(pk: he.HePublicKey, x, params: PackingParams, rng=None) -> list[he.Ciphertext]:
    """Pack ``x`` and encrypt it as one ciphertext per segment."""
    rng = make_rng(rng)
    arr = _checked(x, params)
    out = []
    for lo, hi in segment_bounds(params, slots_per_ciphertext(pk, params.element_bits)):
        v = _pack_bits(arr[lo:hi], params.element_bits)
        out.append(he.encrypt(pk, v, rng))
    return out


def unpack_segments(values, params: PackingParams, pk: he.HePublicKey) -> np.ndarray:
    bounds = segment_bounds(params, slots_per_ciphertext(pk, params.element_bits))
    if len(values) != len(bounds):
        raise ValueError(f"expected {len(bounds)} segments, got {len(values)}")
    parts = [unpack(v, _segment_params(params, hi - lo)) for v, (lo, hi) in zip(values, bounds)]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def ciphertext_to_bytes(c: he.Ciphertext) -> bytes:
    """level s (4 bytes) || big-endian value, fixed width for the modulus."""
    width = (he._pow_cached(c.n, c.s + 1).bit_length() + 7) // 8
    return struct.pack(">I", c.s) + int(c.value).to_bytes(width, "big")


def ciphertext_from_bytes(data: bytes, pk: he.HePublicKey) -> he.Ciphertext:
    if len(data) < 4:
        raise _bytes.FormatError("truncated ciphertext")
    s = struct.unpack(">I", data[:4])[0]
    if s != pk.s:
        raise _bytes.FormatError(f"ciphertext level {s} does not match key level {pk.s}")
    if len(data) - 4 != pk.ciphertext_bytes:
        raise _bytes.FormatError("ciphertext width does not match key")
    return he.Ciphertext(int.from_bytes(data[4:], "big"), s, pk.n)


# --------------------------------------------------------------------------
# KEM-DEM


@dataclass(frozen=True)
class KemDemKey:
    k: int
    p: int
    iv: int

    def __post_init__(self):
        if not 0 < self.k < self.p:
            raise ValueError("k must lie in Z*_p")
        if not 0 <= self.iv < 1 << IV_BITS:
            raise ValueError("IV must fit in 64 bits")


@dataclass(frozen=True)
class KemDemCiphertext:
    iv: int
    encrypted_key: he.Ciphertext
    masked: tuple[int, ...]  # centered representatives in (-p/2, p/2]
    p: int

    @property
    def m(self) -> int:
        return len(self.masked)


def kem_prime(l: int = KEM_L_DEFAULT, rng=None) -> int:
    """A random l-bit prime; shared by all users of a round."""
    rng = make_rng(rng)
    while True:
        c = rng.getrandbits(l) | (1 << (l - 1)) | 1
        if gmpy2.is_prime(c, he.MR_ROUNDS):
            return int(c)


def kem_keygen(p: int, rng=None) -> KemDemKey:
    rng = make_rng(rng)
    return KemDemKey(k=rng.randrange(1, p), p=p, iv=rng.getrandbits(IV_BITS))


def iv_index(iv: int, i: int) -> int:
    """IV || i as a 96-bit integer (IV high, 32-bit index low)."""
    if not 0 <= i < 1 << INDEX_BITS:
        raise ValueError("slot index exceeds 32 bits")
    return (iv << INDEX_BITS) | i


def keystream(key: KemDemKey, m: int) -> list[int]:
    """ks_i = k * (IV || i) mod p for i = 1..m."""
    return [key.k * iv_index(key.iv, i) % key.p for i in range(1, m + 1)]


def kem_encrypt(pk: he.HePublicKey, x, key: KemDemKey, rng=None) -> KemDemCiphertext:
    if pk.s != 1:
        raise ValueError("KEM-DEM is defined for the Paillier (s = 1) key only")
    xs = [int(v) for v in x]
    p = key.p
    if any(v < 0 or v >= p for v in xs):
        raise ValueError("element outside [0, p)")
    half = p // 2
    masked = []
    for v, ks in zip(xs, keystream(key, len(xs))):
        w = (v - ks) % p
        masked.append(w - p if w > half else w)
    return KemDemCiphertext(key.iv, he.encrypt(pk, key.k, rng), tuple(masked), p)


def kem_recover(pk: he.HePublicKey, ct: KemDemCiphertext) -> list[he.Ciphertext]:
    """Per-slot ciphertexts of masked_i + k * (IV || i).

    The plaintext equals x_i plus an unknown multiple of p; ``kem_decode``
    removes it after decryption.
    """
    N = gmpy2.mpz(pk.ns1)
    n = gmpy2.mpz(pk.n)
    ek = gmpy2.mpz(ct.encrypted_key.value)
    # E(k)^(IV||i) for consecutive i: one big power, then one product per slot
    acc = gmpy2.powmod(ek, iv_index(ct.iv, 0), N)
    out = []
    for w in ct.masked:
        acc = acc * ek % N
        lifted = (1 + (w % pk.ns) * n) % N  # (1+n)^w for s = 1
        out.append(he.Ciphertext(int(lifted * acc % N), pk.s, pk.n))
    return out


def kem_decode(plain: int, p: int, ns: int) -> int:
    """Map a decrypted slot back to [0, p): centre mod n^s, reduce mod p."""
    v = plain - ns if plain > ns // 2 else plain
    return v % p


def kem_to_bytes(ct: KemDemCiphertext, l: int = KEM_L_DEFAULT) -> bytes:
    """IV (8) || len(E(k)) (4) || E(k) || p (l/8) || m (4) || per slot: |w| (l/8) || sign byte."""
    width = l // 8
    buf = io.BytesIO()
    buf.write(struct.pack(">Q", ct.iv))
    ek = ciphertext_to_bytes(ct.encrypted_key)
    buf.write(struct.pack(">I", len(ek)))
    buf.write(ek)
    buf.write(int(ct.p).to_bytes(width, "big"))
    buf.write(struct.pack(">I", ct.m))
    for w in ct.masked:
        buf.write(abs(w).to_bytes(width, "big"))
        buf.write(b"\x01" if w < 0 else b"\x00")
    return buf.getvalue()


def kem_from_bytes(data: bytes, pk: he.HePublicKey, l: int = KEM_L_DEFAULT) -> KemDemCiphertext:
    width = l // 8
    buf = io.BytesIO(data)
    iv = _bytes.read_u64(buf)
    ek = ciphertext_from_bytes(_bytes.read_exact(buf, _bytes.read_u32(buf)), pk)
    p = int.from_bytes(_bytes.read_exact(buf, width), "big")
    m = _bytes.read_u32(buf)
    masked = []
    for _ in range(m):
        mag = int.from_bytes(_bytes.read_exact(buf, width), "big")
        sign = _bytes.read_u8(buf)
        if sign > 1:
            raise _bytes.FormatError("bad sign byte")
        masked.append(-mag if sign else mag)
    _bytes.expect_end(buf)
    return KemDemCiphertext(iv, ek, tuple(masked), p)
