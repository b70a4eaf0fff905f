import random

import numpy as np
import pytest

import oracles
from zkagg import encoding as enc
from zkagg import he
from zkagg._bytes import FormatError


def test_pack_matches_shift_oracle():
    rng = np.random.default_rng(0)
    params = enc.PackingParams.for_users(50, 1024, 16)
    assert params.element_bits == 14
    x = rng.integers(0, 1024, 50)
    v = enc.pack(x, params)
    assert v == oracles.pack(x, 14)
    assert enc.unpack(v, params).tolist() == oracles.unpack(v, 50, 14)


def test_packed_sums_do_not_carry():
    rng = np.random.default_rng(1)
    params = enc.PackingParams.for_users(40, 1024, 16)
    xs = [rng.integers(0, 1024, 40) for _ in range(16)]
    xs[0][:] = 1023
    total = sum(enc.pack(x, params) for x in xs)
    assert enc.unpack(total, params).tolist() == oracles.plaintext_sum(xs).tolist()


def test_pack_rejects_out_of_range():
    params = enc.PackingParams.for_users(3, 1024, 4)
    with pytest.raises(ValueError):
        enc.pack([0, 1024, 0], params)
    with pytest.raises(ValueError):
        enc.pack([0, -1, 0], params)
    with pytest.raises(ValueError):
        enc.pack([0, 1], params)
    with pytest.raises(ValueError):
        enc.pack([1, 1, 1], params, capacity_bits=20)


def test_packing_params_invariant():
    with pytest.raises(ValueError):
        enc.PackingParams(12, 3, 1024, 3)
    assert enc.PackingParams.for_users(1, 1024, 1).slack_bits == 0
    assert enc.PackingParams.for_users(1, 1 << 20, 16).element_bits == 24


def test_choose_level():
    assert enc.choose_level(100, 24, 2048) == 2
    assert enc.choose_level(1, 1, 2048) == 1
    with pytest.raises(ValueError):
        enc.choose_level(0, 24, 2048)


def test_segments_cover_vector(small_key):
    pk, sk = small_key
    params = enc.PackingParams.for_users(100, 1024, 8)
    slots = enc.slots_per_ciphertext(pk, params.element_bits)
    bounds = enc.segment_bounds(params, slots)
    assert bounds[0][0] == 0 and bounds[-1][1] == 100
    assert all(a[1] == b[0] for a, b in zip(bounds, bounds[1:]))
    x = np.random.default_rng(2).integers(0, 1024, 100)
    cts = enc.pack_encrypt(pk, x, params, random.Random(0))
    assert len(cts) == len(bounds)
    values = [he.decrypt(sk, c) for c in cts]
    assert enc.unpack_segments(values, params, pk).tolist() == x.tolist()


def test_packed_homomorphic_sum(small_key):
    pk, sk = small_key
    params = enc.PackingParams.for_users(30, 1024, 5)
    rng = np.random.default_rng(3)
    xs = [rng.integers(0, 1024, 30) for _ in range(5)]
    cts = [enc.pack_encrypt(pk, x, params, random.Random(i)) for i, x in enumerate(xs)]
    summed = [he.hom_sum(col) for col in zip(*cts)]
    got = enc.unpack_segments([he.decrypt(sk, c) for c in summed], params, pk)
    assert got.tolist() == oracles.plaintext_sum(xs).tolist()


def test_single_ciphertext_at_capacity_level(small_key):
    _, sk1 = small_key
    params = enc.PackingParams.for_users(200, 1 << 20, 16)
    level = enc.choose_level(200, params.element_bits, sk1.pk.n.bit_length() - 1)
    pk, sk = he.at_level(sk1, level)
    x = np.random.default_rng(4).integers(0, 1 << 20, 200)
    (c,) = enc.pack_encrypt(pk, x, params)
    assert enc.unpack(he.decrypt(sk, c), params).tolist() == x.tolist()


def test_expansion_factor_counts_bytes(small_key):
    _, sk1 = small_key
    factors = []
    for m in (100, 1000):
        params = enc.PackingParams.for_users(m, 1 << 20, 16)
        level = enc.choose_level(m, 24, sk1.pk.n.bit_length() - 1)
        pk, _ = he.at_level(sk1, level)
        size = len(enc.ciphertext_to_bytes(enc.pack_encrypt(pk, np.zeros(m, int), params)[0]))
        assert size == 4 + pk.ciphertext_bytes
        factors.append(enc.expansion_factor(size, m))
    assert factors[1] < factors[0]


def test_ciphertext_bytes_round_trip(small_key):
    pk, sk = small_key
    c = he.encrypt(pk, 99)
    data = enc.ciphertext_to_bytes(c)
    assert enc.ciphertext_from_bytes(data, pk) == c
    with pytest.raises(FormatError):
        enc.ciphertext_from_bytes(data[:-1], pk)
    pk2, _ = he.at_level(sk, 2)
    with pytest.raises(FormatError):
        enc.ciphertext_from_bytes(data, pk2)


def test_keystream_formula():
    key = enc.KemDemKey(k=5, p=101, iv=3)
    assert enc.iv_index(3, 7) == (3 << 32) | 7
    assert enc.keystream(key, 3) == [5 * ((3 << 32) | i) % 101 for i in (1, 2, 3)]
    with pytest.raises(ValueError):
        enc.iv_index(0, 1 << 32)
    with pytest.raises(ValueError):
        enc.KemDemKey(k=0, p=101, iv=0)


def test_kem_round_trip_and_sum(small_key):
    pk, sk = small_key
    p = enc.kem_prime(64, random.Random(0))
    assert p.bit_length() == 64
    rng = random.Random(1)
    xs = [[rng.randrange(1000) for _ in range(20)] for _ in range(3)]
    per_user = []
    for x in xs:
        ct = enc.kem_encrypt(pk, x, enc.kem_keygen(p, rng), rng)
        assert all(abs(w) <= p // 2 for w in ct.masked)
        back = enc.kem_from_bytes(enc.kem_to_bytes(ct), pk)
        assert back == ct
        slots = enc.kem_recover(pk, back)
        assert [enc.kem_decode(he.decrypt(sk, c), p, pk.ns) for c in slots] == x
        per_user.append(slots)
    total = [he.hom_sum(col) for col in zip(*per_user)]
    want = oracles.plaintext_sum(xs).tolist()
    assert [enc.kem_decode(he.decrypt(sk, c), p, pk.ns) for c in total] == want


def test_kem_needs_paillier_level(small_key):
    _, sk = small_key
    pk2, _ = he.at_level(sk, 2)
    with pytest.raises(ValueError):
        enc.kem_encrypt(pk2, [1], enc.kem_keygen(101))


def test_kem_rejects_bad_sign_byte(small_key):
    pk, _ = small_key
    ct = enc.kem_encrypt(pk, [1, 2], enc.kem_keygen(enc.kem_prime(64, random.Random(2))))
    data = bytearray(enc.kem_to_bytes(ct))
    data[-1] = 7
    with pytest.raises(FormatError):
        enc.kem_from_bytes(bytes(data), pk)
