"""Damgard-Jurik encryption with (t, n)-threshold decryption.

Paillier is the ``s = 1`` case. The base is fixed to ``g = 1 + n`` so that
both encryption of the message part and the discrete-log extraction during
decryption have closed forms (a truncated binomial series and an n-adic
logarithm respectively).

Keys come from an in-process trusted dealer. The dealer also precomputes
``hs = h^(n^s) mod n^(s+1)`` for a random ``h``; encryption then uses
``hs^alpha`` with a short ``alpha`` as the randomizer. Computing an
``n^s``-th power directly costs ``s * key_bits`` squarings, which is
hopeless at the large levels polynomial packing needs, so the dealer uses
the factorisation and a Teichmueller lift instead.

Exponentiation is not constant time.
"""

from __future__ import annotations

import io
import math
import random
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import gmpy2
from gmpy2 import mpz

from . import _bytes
from ._fixedbase import FixedBase
from ._rand import make_rng

SUPPORTED_KEY_BITS = (1024, 2048, 3072, 4096)
MR_ROUNDS = 40
_PRIME_RETRIES = 100_000


class KeyGenerationError(RuntimeError):
    pass


class CiphertextError(ValueError):
    pass


@dataclass(frozen=True)
class HePublicKey:
    n: int
    g: int
    s: int
    key_bits: int
    hs: int = field(repr=False)
    alpha_bits: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("level s must be >= 1")
        if self.g != self.n + 1:
            raise ValueError("base must be g = n + 1")
        if not self.alpha_bits:
            object.__setattr__(self, "alpha_bits", self.key_bits // 2)

    @property
    def ns(self) -> int:
        """Plaintext modulus n^s."""
        return _pow_cached(self.n, self.s)

    @property
    def ns1(self) -> int:
        """Ciphertext modulus n^(s+1)."""
        return _pow_cached(self.n, self.s + 1)

    @property
    def ciphertext_bytes(self) -> int:
        return (self.ns1.bit_length() + 7) // 8


@dataclass(frozen=True)
class HeSecretKey:
    pk: HePublicKey
    d: int = field(repr=False)
    p: int = field(repr=False)
    q: int = field(repr=False)

    @property
    def lam(self) -> int:
        return math.lcm(self.p - 1, self.q - 1)

    @property
    def share_modulus(self) -> int:
        return self.pk.ns * self.lam


@dataclass(frozen=True)
class KeyShare:
    index: int
    s_u: int = field(repr=False)
    t: int
    delta: int = field(repr=False)

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("threshold must be >= 1")
        if self.delta != math.factorial(self.t):
            raise ValueError("delta must equal t!")


@dataclass(frozen=True)
class Ciphertext:
    value: int
    s: int
    n: int = field(repr=False)

    def __post_init__(self):
        mod = _pow_cached(self.n, self.s + 1)
        if not 0 < self.value < mod:
            raise CiphertextError("ciphertext outside Z_{n^(s+1)}")


@dataclass(frozen=True)
class PartialDecryption:
    index: int
    value: int = field(repr=False)


@lru_cache(maxsize=64)
def _pow_cached(n: int, e: int) -> int:
    return int(mpz(n) ** e)


# --------------------------------------------------------------------------
# (1+n)^m and its inverse


def pow_one_plus_n(n: int, m: int, s: int) -> int:
    """(1 + n)^m mod n^(s+1) via the binomial series truncated at n^s.

    Term k is C(m, k) n^k, so C(m, k) is only needed mod n^(s+1-k); the
    working modulus shrinks as k grows.
    """
    n = mpz(n)
    N = n ** (s + 1)
    m = mpz(m) % (n**s)
    if s == 1:
        return int((1 + m * n) % N)
    inv_fact = gmpy2.invert(mpz(math.factorial(s)), N)
    inv_facts = [mpz(0)] * (s + 1)  # inverse of k! mod N, walking down from s!
    inv_facts[s] = inv_fact
    for k in range(s, 0, -1):
        inv_facts[k - 1] = inv_facts[k] * k % N
    total = mpz(1)
    falling = mpz(1)  # m (m-1) ... (m-k+1)
    mk = m
    mod = N
    nk = mpz(1)
    for k in range(1, s + 1):
        mod //= n
        mk %= mod
        falling = falling * (mk - k + 1) % mod
        nk *= n
        total += falling * (inv_facts[k] % mod) % mod * nk
    return int(total % N)


@lru_cache(maxsize=64)
def _log_generator_inv(base: int, n: int, s: int) -> int:
    """Inverse of log(1+n)/base mod base^s; base is n or one of its primes."""
    base = mpz(base)
    return int(gmpy2.invert(mpz(_log_over(base, (1 + mpz(n)) % base ** (s + 1), s)), base**s))


def _log_over(base, a, s: int) -> int:
    """log(a) / base mod base^s for a = 1 mod base (truncated series)."""
    base = mpz(base)
    bs = base**s
    # for a != 1 mod base the floor division still yields some ring element;
    # decryption is total by design
    u = (mpz(a) % (bs * base) - 1) // base % bs
    if s == 1:
        return int(u)
    fs = mpz(math.factorial(s))
    acc = mpz(0)
    v = u  # base^(k-1) u^k
    for k in range(1, s + 1):
        term = v * (fs // k)
        acc = acc + term if k % 2 else acc - term
        v = v * base % bs * u % bs
        if v == 0:
            break
    return int(acc % bs * gmpy2.invert(fs, bs) % bs)


def dlog_one_plus_n(n: int, a: int, s: int) -> int:
    """Recover i from a = (1+n)^i mod n^(s+1)."""
    return int(mpz(_log_over(n, a, s)) * _log_generator_inv(n, n, s) % (mpz(n) ** s))


# --------------------------------------------------------------------------
# key generation


def _random_prime(bits: int, rng: random.Random, safe: bool) -> mpz:
    for _ in range(_PRIME_RETRIES):
        if safe:
            c = mpz(rng.getrandbits(bits - 1)) | (mpz(3) << (bits - 3)) | 1
            if gmpy2.is_prime(c, MR_ROUNDS) and gmpy2.is_prime(2 * c + 1, MR_ROUNDS):
                return 2 * c + 1
            continue
        c = mpz(rng.getrandbits(bits)) | (mpz(3) << (bits - 2)) | 1
        # walk a bounded window instead of resampling every time
        for _step in range(2000):
            if c.bit_length() != bits:
                break
            if gmpy2.is_prime(c, MR_ROUNDS):
                return c
            c += 2
    raise KeyGenerationError("prime generation failed; check the RNG")


def _teichmuller(h: mpz, p: mpz, prec: int) -> mpz:
    """The (p-1)-th root of unity mod p^prec congruent to h mod p."""
    x = h % p
    k = 1
    while k < prec:
        k = min(2 * k, prec)
        mod = p**k
        y = gmpy2.powmod(x, p - 1, mod)
        x = (x - (y - 1) * x * gmpy2.invert((p - 1) * y, mod)) % mod
    return x


def _nth_residue_base(h: mpz, p: mpz, q: mpz, s: int) -> int:
    """h^(n^s) mod n^(s+1), using the factorisation of n."""
    n = p * q
    ns = n**s
    parts = []
    for prime in (p, q):
        mod = prime ** (s + 1)
        omega = _teichmuller(h, prime, s + 1)
        parts.append((gmpy2.powmod(omega, ns % (prime - 1), mod), mod))
    (a, ma), (b, mb) = parts
    # CRT
    return int((a + ma * ((b - a) * gmpy2.invert(ma, mb) % mb)) % (ma * mb))


def keygen(key_bits: int, s: int = 1, rng_seed=None, *, safe_primes: bool = False,
           allow_small: bool = False):
    """Generate a Damgard-Jurik key pair at level ``s``.

    ``allow_small`` admits toy key sizes for unit tests; production sizes
    are the four listed in ``SUPPORTED_KEY_BITS``.
    """
    if key_bits not in SUPPORTED_KEY_BITS and not (allow_small and key_bits >= 64 and key_bits % 2 == 0):
        raise ValueError(f"key_bits must be one of {SUPPORTED_KEY_BITS}")
    if s < 1:
        raise ValueError("level s must be >= 1")
    rng = make_rng(rng_seed)
    half = key_bits // 2
    for _ in range(64):
        p = _random_prime(half, rng, safe_primes)
        q = _random_prime(half, rng, safe_primes)
        if p == q:
            continue
        n = p * q
        if n.bit_length() != key_bits:
            continue
        lam = mpz(math.lcm(p - 1, q - 1))
        ns = n**s
        if math.gcd(n, (p - 1) * (q - 1)) != 1 or math.gcd(ns, lam) != 1:
            continue
        break
    else:
        raise KeyGenerationError("could not find a suitable modulus")
    # d = 1 mod n^s, d = 0 mod lambda
    d = lam * gmpy2.invert(lam, ns) % (ns * lam)
    while True:
        h = mpz(rng.randrange(2, int(n) - 1))
        if math.gcd(h, n) == 1:
            break
    hs = _nth_residue_base(h, p, q, s)
    pk = HePublicKey(n=int(n), g=int(n) + 1, s=s, key_bits=key_bits, hs=hs)
    sk = HeSecretKey(pk=pk, d=int(d), p=int(p), q=int(q))
    return pk, sk


def at_level(sk: HeSecretKey, s: int, rng_seed=None):
    """Same modulus, different level: the dealer re-derives d and hs."""
    if s < 1:
        raise ValueError("level s must be >= 1")
    rng = make_rng(rng_seed)
    p, q = mpz(sk.p), mpz(sk.q)
    n = p * q
    lam = mpz(sk.lam)
    ns = n**s
    if math.gcd(ns, lam) != 1:
        raise KeyGenerationError("modulus unusable at this level")
    d = lam * gmpy2.invert(lam, ns) % (ns * lam)
    while True:
        h = mpz(rng.randrange(2, int(n) - 1))
        if math.gcd(h, n) == 1:
            break
    pk = HePublicKey(n=int(n), g=int(n) + 1, s=s, key_bits=sk.pk.key_bits,
                     hs=_nth_residue_base(h, p, q, s))
    return pk, HeSecretKey(pk=pk, d=int(d), p=int(p), q=int(q))


# --------------------------------------------------------------------------
# encryption / homomorphism / decryption


# a table costs about 2^13 * key size in memory, so only small moduli get one
_TABLE_MAX_BITS = 8192


@lru_cache(maxsize=8)
def _randomizer_table(pk: HePublicKey) -> FixedBase | None:
    if pk.ns1.bit_length() > _TABLE_MAX_BITS:
        return None
    return FixedBase(pk.hs, pk.ns1, pk.alpha_bits)


def encrypt(pk: HePublicKey, m: int, rng=None, *, r: int | None = None) -> Ciphertext:
    """E(m) = g^m * r^(n^s) mod n^(s+1).

    With ``r`` given the textbook formula is evaluated literally (used for
    test vectors); otherwise the randomizer is ``hs^alpha``.
    """
    if not 0 <= m < pk.ns:
        raise ValueError("plaintext out of range [0, n^s)")
    N = pk.ns1
    gm = pow_one_plus_n(pk.n, m, pk.s)
    if r is not None:
        if math.gcd(r, pk.n) != 1:
            raise ValueError("r must be a unit mod n")
        rn = gmpy2.powmod(r, pk.ns, N)
    else:
        rng = make_rng(rng)
        alpha = rng.getrandbits(pk.alpha_bits) | 1
        table = _randomizer_table(pk)
        rn = table.pow(alpha) if table is not None else gmpy2.powmod(pk.hs, alpha, N)
    return Ciphertext(int(mpz(gm) * rn % N), pk.s, pk.n)


def embed(pk: HePublicKey, m: int) -> Ciphertext:
    """Deterministic encryption with randomizer 1, for values already public."""
    return Ciphertext(pow_one_plus_n(pk.n, m % pk.ns, pk.s), pk.s, pk.n)


def _check_pair(c1: Ciphertext, c2: Ciphertext) -> None:
    if c1.s != c2.s:
        raise CiphertextError(f"level mismatch: {c1.s} != {c2.s}")
    if c1.n != c2.n:
        raise CiphertextError("ciphertexts under different moduli")


def hom_add(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _check_pair(c1, c2)
    N = _pow_cached(c1.n, c1.s + 1)
    return Ciphertext(int(mpz(c1.value) * c2.value % N), c1.s, c1.n)


def hom_sum(cs) -> Ciphertext:
    cs = list(cs)
    if not cs:
        raise ValueError("nothing to add")
    first = cs[0]
    N = mpz(_pow_cached(first.n, first.s + 1))
    acc = mpz(first.value)
    for c in cs[1:]:
        _check_pair(first, c)
        acc = acc * c.value % N
    return Ciphertext(int(acc), first.s, first.n)


def hom_scale(c: Ciphertext, k: int) -> Ciphertext:
    """E(m)^k = E(k*m)."""
    N = _pow_cached(c.n, c.s + 1)
    return Ciphertext(int(gmpy2.powmod(c.value, k, N)), c.s, c.n)


def _check_unit(pk: HePublicKey, c: Ciphertext) -> None:
    if c.n != pk.n or c.s != pk.s:
        raise CiphertextError("ciphertext does not match key")
    if math.gcd(c.value, pk.n) != 1:
        raise CiphertextError("ciphertext not in Z*_{n^(s+1)}")


def decrypt(sk: HeSecretKey, c: Ciphertext) -> int:
    """Reference (non-threshold) decryption.

    Works modulo p^(s+1) and q^(s+1) separately: c^(p-1) kills the
    randomizer, the logarithm recovers (p-1) m mod p^s, and CRT joins the
    two halves.
    """
    pk = sk.pk
    _check_unit(pk, c)
    s = pk.s
    parts = []
    for prime in (mpz(sk.p), mpz(sk.q)):
        mod = prime ** (s + 1)
        ps = prime**s
        a = gmpy2.powmod(c.value % mod, prime - 1, mod)
        x = _log_over(prime, a, s) * _log_generator_inv(prime, pk.n, s) % ps
        parts.append((x * gmpy2.invert(prime - 1, ps) % ps, ps))
    (a, ma), (b, mb) = parts
    return int((a + ma * ((b - a) * gmpy2.invert(ma, mb) % mb)) % (ma * mb))


# --------------------------------------------------------------------------
# threshold decryption


def split_key(sk: HeSecretKey, t: int, n_users: int, rng=None) -> list[KeyShare]:
    """Shamir-share d with a degree t-1 polynomial over Z_{n^s * lambda}."""
    if t < 1:
        raise ValueError("threshold must be >= 1")
    if t > n_users:
        raise ValueError("threshold exceeds number of users")
    rng = make_rng(rng)
    M = sk.share_modulus
    coeffs = [sk.d] + [rng.randrange(M) for _ in range(t - 1)]
    delta = math.factorial(t)
    shares = []
    for i in range(1, n_users + 1):
        acc = 0
        for a in reversed(coeffs):
            acc = (acc * i + a) % M
        shares.append(KeyShare(index=i, s_u=acc, t=t, delta=delta))
    return shares


def partial_decrypt(share: KeyShare, c: Ciphertext) -> PartialDecryption:
    """c^(2 * delta * s_u) mod n^(s+1)."""
    N = _pow_cached(c.n, c.s + 1)
    return PartialDecryption(share.index, int(gmpy2.powmod(c.value, 2 * share.delta * share.s_u, N)))


def lagrange_at_zero(indices, delta: int) -> tuple[dict[int, int], int]:
    """Integer coefficients S * prod_{j != i} (-j) / (i - j) and the scale S.

    S is delta times the smallest integer that clears every denominator.
    With indices drawn from 1..t this extra factor is 1 and S = delta; for
    sparser index sets (e.g. {1, 3, 5} with t = 3) delta = t! alone is not
    enough.
    """
    fracs = {}
    for i in indices:
        num, den = 1, 1
        for j in indices:
            if j != i:
                num *= -j
                den *= i - j
        g = math.gcd(num, den)
        num, den = num // g, den // g
        if den < 0:
            num, den = -num, -den
        fracs[i] = (num, den)
    extra = 1
    for num, den in fracs.values():
        need = den // math.gcd(den, delta)
        extra = math.lcm(extra, need)
    scale = delta * extra
    return {i: scale * num // den for i, (num, den) in fracs.items()}, scale


def _interpolate(partials, pk: HePublicKey, delta: int) -> int:
    N = mpz(pk.ns1)
    lam, scale = lagrange_at_zero([p.index for p in partials], delta)
    acc = mpz(1)
    for pd in partials:
        acc = acc * gmpy2.powmod(pd.value, 2 * lam[pd.index], N) % N
    # acc = (1 + n)^(4 * delta * scale * m)
    extracted = dlog_one_plus_n(pk.n, acc, pk.s)
    return int(mpz(extracted) * gmpy2.invert(4 * mpz(delta) * scale, pk.ns) % pk.ns)


def combine_shares(partials, pk: HePublicKey, t: int) -> int:
    """Share combining: any t partial decryptions with distinct indices.

    Extra partials beyond ``t`` are ignored (the first ``t`` are used).
    A garbage partial yields a garbage but well-defined ring element.
    """
    partials = list(partials)
    idx = [p.index for p in partials]
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate share indices")
    if len(partials) < t:
        raise ValueError(f"need at least {t} partial decryptions, got {len(partials)}")
    for pd in partials:
        if math.gcd(pd.value, pk.n) != 1:
            # a non-unit cannot come from a valid ciphertext; still total
            return 0
    return _interpolate(partials[:t], pk, math.factorial(t))


def all_subsets_agree(partials, pk: HePublicKey, t: int) -> bool:
    """True when every t-subset combines to the same value."""
    vals = {combine_shares(sub, pk, t) for sub in combinations(partials, t)}
    return len(vals) == 1


# --------------------------------------------------------------------------
# serialization

_MAGIC = b"ZKHE"
_VERSION = 1
_KIND_PK, _KIND_SK, _KIND_SHARE = 1, 2, 3


def _header(kind: int) -> io.BytesIO:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(bytes([_VERSION, kind]))
    return buf


def _open(data: bytes, kind: int) -> io.BytesIO:
    buf = io.BytesIO(data)
    _bytes.expect_magic(buf, _MAGIC, _VERSION)
    got = _bytes.read_u8(buf)
    if got != kind:
        raise _bytes.FormatError(f"record kind {got}, expected {kind}")
    return buf


def public_key_to_bytes(pk: HePublicKey) -> bytes:
    buf = _header(_KIND_PK)
    for v in (pk.n, pk.s, pk.key_bits, pk.hs, pk.alpha_bits):
        _bytes.write_bigint(buf, v)
    return buf.getvalue()


def public_key_from_bytes(data: bytes) -> HePublicKey:
    buf = _open(data, _KIND_PK)
    n, s, kb, hs, ab = (_bytes.read_bigint(buf) for _ in range(5))
    _bytes.expect_end(buf)
    return HePublicKey(n=n, g=n + 1, s=s, key_bits=kb, hs=hs, alpha_bits=ab)


def secret_key_to_bytes(sk: HeSecretKey) -> bytes:
    buf = _header(_KIND_SK)
    pkb = public_key_to_bytes(sk.pk)
    buf.write(len(pkb).to_bytes(4, "big"))
    buf.write(pkb)
    for v in (sk.d, sk.p, sk.q):
        _bytes.write_bigint(buf, v)
    return buf.getvalue()


def secret_key_from_bytes(data: bytes) -> HeSecretKey:
    buf = _open(data, _KIND_SK)
    pk = public_key_from_bytes(_bytes.read_exact(buf, _bytes.read_u32(buf)))
    d, p, q = (_bytes.read_bigint(buf) for _ in range(3))
    _bytes.expect_end(buf)
    return HeSecretKey(pk=pk, d=d, p=p, q=q)


def key_share_to_bytes(share: KeyShare) -> bytes:
    buf = _header(_KIND_SHARE)
    for v in (share.index, share.t, share.s_u):
        _bytes.write_bigint(buf, v)
    return buf.getvalue()


def key_share_from_bytes(data: bytes) -> KeyShare:
    buf = _open(data, _KIND_SHARE)
    i, t, s_u = (_bytes.read_bigint(buf) for _ in range(3))
    _bytes.expect_end(buf)
    return KeyShare(index=i, s_u=s_u, t=t, delta=math.factorial(t))
