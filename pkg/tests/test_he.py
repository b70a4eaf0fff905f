import math
import random
from itertools import combinations

import pytest

import oracles
from zkagg import he
from zkagg._bytes import FormatError


def tiny_key(p, q, s):
    n = p * q
    pk = he.HePublicKey(n=n, g=n + 1, s=s, key_bits=n.bit_length(), hs=1)
    lam = math.lcm(p - 1, q - 1)
    d = lam * pow(lam, -1, n**s) % (n**s * lam)
    return pk, he.HeSecretKey(pk, d, p, q)


def test_paillier_hand_vector():
    pk, sk = tiny_key(7, 11, 1)
    c = he.encrypt(pk, 42, r=23)
    assert c.value == 3840
    assert he.decrypt(sk, c) == 42
    assert oracles.paillier_decrypt(7, 11, c.value) == 42


def test_damgard_jurik_level_two_hand_vector():
    pk, sk = tiny_key(11, 13, 2)
    c = he.encrypt(pk, 1000, r=7)
    assert c.value == 471842
    assert he.decrypt(sk, c) == 1000


@pytest.mark.parametrize("s", [1, 2, 3, 5])
def test_binomial_power_and_log_match_definition(s):
    rng = random.Random(s)
    n = 1009 * 1013
    for _ in range(20):
        m = rng.randrange(n**s)
        a = he.pow_one_plus_n(n, m, s)
        assert a == pow(1 + n, m, n ** (s + 1))
        assert he.dlog_one_plus_n(n, a, s) == m
        assert oracles.dj_dlog(n, s, a) == m


@pytest.mark.parametrize("s", [1, 2, 4])
def test_encrypt_decrypt_against_oracle(small_key, s):
    _, sk1 = small_key
    pk, sk = he.at_level(sk1, s, b"lvl")
    rng = random.Random(s)
    for _ in range(10):
        m = rng.randrange(pk.ns)
        c = he.encrypt(pk, m, rng)
        assert he.decrypt(sk, c) == m
        assert oracles.dj_decrypt(sk.p, sk.q, s, c.value) == m


def test_randomizer_is_an_ns_th_power(small_key):
    _, sk = small_key
    pk = sk.pk
    c = he.encrypt(pk, 0, random.Random(1))
    # an encryption of zero is an n-th residue: it dies under lambda
    assert pow(c.value, sk.lam, pk.ns1) == 1


def test_homomorphism(small_key):
    pk, sk = small_key
    rng = random.Random(2)
    a, b = rng.randrange(pk.ns), rng.randrange(pk.ns)
    ca, cb = he.encrypt(pk, a, rng), he.encrypt(pk, b, rng)
    assert he.decrypt(sk, he.hom_add(ca, cb)) == (a + b) % pk.ns
    assert he.decrypt(sk, he.hom_scale(ca, 7)) == 7 * a % pk.ns
    assert he.decrypt(sk, he.hom_sum([ca, cb, ca])) == (2 * a + b) % pk.ns


def test_encryption_is_randomized(small_key):
    pk, _ = small_key
    rng = random.Random(3)
    assert he.encrypt(pk, 5, rng).value != he.encrypt(pk, 5, rng).value


def test_plaintext_range_checked(small_key):
    pk, _ = small_key
    with pytest.raises(ValueError):
        he.encrypt(pk, pk.ns)
    with pytest.raises(ValueError):
        he.encrypt(pk, -1)


def test_mixed_levels_rejected(small_key):
    pk, sk = small_key
    pk2, _ = he.at_level(sk, 2)
    with pytest.raises(ValueError):
        he.hom_add(he.encrypt(pk, 1), he.encrypt(pk2, 1))


def test_keygen_deterministic_and_sized():
    a, _ = he.keygen(256, 1, b"x", allow_small=True)
    b, _ = he.keygen(256, 1, b"x", allow_small=True)
    c, _ = he.keygen(256, 1, b"y", allow_small=True)
    assert a == b and a.n != c.n
    assert a.n.bit_length() == 256
    with pytest.raises(ValueError):
        he.keygen(256, 1, b"x")
    with pytest.raises(ValueError):
        he.keygen(1024, 0, b"x")


def test_lagrange_coefficients_match_fractions():
    from fractions import Fraction

    for idx in ([1, 2, 3], [1, 3, 5], [2, 4, 6, 7]):
        delta = math.factorial(len(idx))
        lam, scale = he.lagrange_at_zero(idx, delta)
        assert scale % delta == 0
        for i in idx:
            w = Fraction(1)
            for j in idx:
                if j != i:
                    w *= Fraction(-j, i - j)
            assert lam[i] == w * scale


@pytest.mark.parametrize("t,n", [(1, 1), (1, 3), (2, 3), (3, 5), (4, 4)])
def test_threshold_every_subset(small_key, t, n):
    pk, sk = small_key
    shares = he.split_key(sk, t, n, b"split")
    m = 123456789 % pk.ns
    c = he.encrypt(pk, m, random.Random(t * 10 + n))
    partials = [he.partial_decrypt(s, c) for s in shares]
    for sub in combinations(partials, t):
        assert he.combine_shares(sub, pk, t) == m
    assert he.all_subsets_agree(partials, pk, t)
    with pytest.raises(ValueError):
        he.combine_shares(partials[: t - 1], pk, t)


def test_threshold_level_two(small_key):
    _, sk1 = small_key
    pk, sk = he.at_level(sk1, 2, b"t2")
    shares = he.split_key(sk, 2, 3, b"s")
    m = pk.ns - 12345
    c = he.encrypt(pk, m)
    partials = [he.partial_decrypt(s, c) for s in shares]
    assert all(he.combine_shares(p, pk, 2) == m for p in combinations(partials, 2))


def test_duplicate_share_indices_rejected(small_key):
    pk, sk = small_key
    shares = he.split_key(sk, 2, 3)
    c = he.encrypt(pk, 5)
    p = he.partial_decrypt(shares[0], c)
    with pytest.raises(ValueError):
        he.combine_shares([p, p], pk, 2)


def test_split_key_validation(small_key):
    _, sk = small_key
    with pytest.raises(ValueError):
        he.split_key(sk, 0, 3)
    with pytest.raises(ValueError):
        he.split_key(sk, 4, 3)


def test_key_serialization_round_trip(small_key):
    pk, sk = small_key
    assert he.public_key_from_bytes(he.public_key_to_bytes(pk)) == pk
    assert he.secret_key_from_bytes(he.secret_key_to_bytes(sk)) == sk
    share = he.split_key(sk, 2, 3)[1]
    assert he.key_share_from_bytes(he.key_share_to_bytes(share)) == share
    with pytest.raises(FormatError):
        he.public_key_from_bytes(he.secret_key_to_bytes(sk))
    with pytest.raises(FormatError):
        he.public_key_from_bytes(he.public_key_to_bytes(pk)[:-1])


def test_ciphertext_bounds(small_key):
    pk, _ = small_key
    with pytest.raises(he.CiphertextError):
        he.Ciphertext(0, pk.s, pk.n)
    with pytest.raises(he.CiphertextError):
        he.Ciphertext(pk.ns1, pk.s, pk.n)
