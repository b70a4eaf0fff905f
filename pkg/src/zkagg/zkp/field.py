"""Vectorised arithmetic in F_p for p = 2^61 - 1.

Elements are ``uint64`` arrays holding canonical representatives. Products
are formed from 32-bit halves so that nothing overflows 64 bits; the
Mersenne modulus then reduces with shifts and masks.
"""

from __future__ import annotations

import hashlib

import numpy as np

try:  # optional accelerator; results are identical either way
    import numba
except ImportError:  # pragma: no cover
    numba = None

P = (1 << 61) - 1
_P = np.uint64(P)
_M32 = np.uint64(0xFFFFFFFF)
_M29 = np.uint64((1 << 29) - 1)
_S61 = np.uint64(61)
_S32 = np.uint64(32)
_S29 = np.uint64(29)
_S3 = np.uint64(3)


def reduce(x: np.ndarray) -> np.ndarray:
    """Reduce values below 2^64 to [0, p)."""
    x = (x & _P) + (x >> _S61)
    x = (x & _P) + (x >> _S61)
    return x - (x >= _P).astype(np.uint64) * _P


def from_int(values) -> np.ndarray:
    """Signed Python/numpy integers (|v| < 2^63) to field elements."""
    v = np.asarray(values)
    if v.dtype == object:
        return np.array([int(a) % P for a in v.ravel()], dtype=np.uint64).reshape(v.shape)
    v = v.astype(np.int64)
    return np.where(v < 0, (v % P), v).astype(np.uint64) % _P


def to_signed(x: np.ndarray) -> np.ndarray:
    """Centered representatives as int64."""
    x = np.asarray(x, dtype=np.uint64)
    half = np.uint64(P // 2)
    return np.where(x > half, x.astype(np.int64) - np.int64(P), x.astype(np.int64))


def add(a, b):
    return reduce(a + b)


def sub(a, b):
    return reduce(a + (_P - b))


def neg(a):
    return reduce(_P - a)


def mul(a, b):
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    a1, a0 = a >> _S32, a & _M32
    b1, b0 = b >> _S32, b & _M32
    hi = reduce((a1 * b1) << _S3)  # 2^64 = 8 (mod p)
    mid = a1 * b0 + a0 * b1  # < 2^62
    mid = (mid >> _S29) + ((mid & _M29) << _S32)
    lo = reduce(a0 * b0)
    return reduce(hi + reduce(mid) + lo)


if numba is not None:
    _U = numba.uint64

    @numba.njit(cache=True, inline="always")
    def _mm(a, b):
        m32 = _U(0xFFFFFFFF)
        a1 = a >> _U(32)
        a0 = a & m32
        b1 = b >> _U(32)
        b0 = b & m32
        hi = (a1 * b1) << _U(3)
        mid = a1 * b0 + a0 * b1
        mid = (mid >> _U(29)) + ((mid & _U(0x1FFFFFFF)) << _U(32))
        lo = a0 * b0
        lo = (lo & _U(P)) + (lo >> _U(61))
        s = hi + mid + lo
        s = (s & _U(P)) + (s >> _U(61))
        if s >= _U(P):
            s -= _U(P)
        return s

    @numba.njit(cache=True)
    def _nb_mul(a, b, out):
        for i in range(a.size):
            out[i] = _mm(a[i], b[i])

    @numba.njit(cache=True)
    def _nb_rowdot(a, b, out):
        # out[r] = sum_k a[r, k] * b[r, k]
        for r in range(a.shape[0]):
            acc = _U(0)
            for k in range(a.shape[1]):
                acc += _mm(a[r, k], b[r, k])
                if acc >= _U(1 << 63):
                    acc = (acc & _U(P)) + (acc >> _U(61))
            acc = (acc & _U(P)) + (acc >> _U(61))
            if acc >= _U(P):
                acc -= _U(P)
            out[r] = acc


def fast_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of equally shaped arrays."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))
    if numba is None or a.size < 256:
        return mul(a, b)
    fa, fb = np.ascontiguousarray(a).ravel(), np.ascontiguousarray(b).ravel()
    out = np.empty(fa.size, dtype=np.uint64)
    _nb_mul(fa, fb, out)
    return out.reshape(a.shape)


def rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over the last axis of a * b."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))
    if numba is None:
        return sum_mod(mul(a, b), axis=-1)
    shape = a.shape[:-1]
    k = a.shape[-1]
    fa = np.ascontiguousarray(a).reshape(-1, k)
    fb = np.ascontiguousarray(b).reshape(-1, k)
    out = np.empty(fa.shape[0], dtype=np.uint64)
    _nb_rowdot(fa, fb, out)
    return out.reshape(shape)


def sum_mod(x: np.ndarray, axis=-1) -> np.ndarray:
    """Sum along ``axis`` without overflow (fewer than 2^32 terms)."""
    x = np.asarray(x, dtype=np.uint64)
    hi = reduce(np.sum(x >> _S32, axis=axis, dtype=np.uint64))
    lo = reduce(np.sum(x & _M32, axis=axis, dtype=np.uint64))
    return reduce(mul(hi, np.uint64(1 << 32)) + lo)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, k) @ (k, m) over F_p."""
    return rowdot(a[:, None, :], np.swapaxes(b, -1, -2)[None, :, :])


def expand(seed: bytes, domain: bytes, count: int) -> np.ndarray:
    """``count`` field elements from SHAKE-256(domain || seed)."""
    if count == 0:
        return np.zeros(0, dtype=np.uint64)
    raw = hashlib.shake_256(domain + seed).digest(8 * count)
    return reduce(np.frombuffer(raw, dtype="<u8") >> _S3)


class Tape:
    """Sequential reader over a seed-expanded stream of field elements."""

    __slots__ = ("seed", "domain", "pos", "_buf", "_block")

    def __init__(self, seed: bytes, domain: bytes, block: int = 1 << 10):
        self.seed = seed
        self.domain = domain
        self.pos = 0
        self._block = block
        self._buf = np.zeros(0, dtype=np.uint64)

    def take(self, count: int) -> np.ndarray:
        end = self.pos + count
        if end > self._buf.size:
            need = max(end, 2 * self._buf.size, self._block)
            self._buf = expand(self.seed, self.domain, need)
        out = self._buf[self.pos:end]
        self.pos = end
        return out
