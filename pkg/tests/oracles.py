"""Slow, independent reference implementations used as test oracles."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def dj_encrypt(n: int, s: int, m: int, r: int) -> int:
    """(1+n)^m * r^(n^s) mod n^(s+1), straight from the definition."""
    N = n ** (s + 1)
    return pow(1 + n, m, N) * pow(r, n**s, N) % N


def paillier_decrypt(p: int, q: int, c: int) -> int:
    """Textbook L(c^lambda mod n^2) * mu mod n."""
    n = p * q
    lam = math.lcm(p - 1, q - 1)
    L = lambda u: (u - 1) // n  # noqa: E731
    mu = pow(L(pow(n + 1, lam, n * n)), -1, n)
    return L(pow(c, lam, n * n)) * mu % n


def dj_dlog(n: int, s: int, a: int) -> int:
    """i from a = (1+n)^i mod n^(s+1), digit by digit."""
    i = 0
    for j in range(1, s + 1):
        nj = n**j
        t1 = (a % n ** (j + 1) - 1) // n
        t2 = i
        for k in range(2, j + 1):
            i -= 1
            t2 = t2 * i % nj
            t1 = (t1 - t2 * n ** (k - 1) * pow(math.factorial(k), -1, nj)) % nj
        i = t1
    return i


def dj_decrypt(p: int, q: int, s: int, c: int) -> int:
    n = p * q
    lam = math.lcm(p - 1, q - 1)
    ns = n**s
    i = dj_dlog(n, s, pow(c, lam, n ** (s + 1)))
    return i * pow(lam, -1, ns) % ns


def lagrange_exponent_decrypt(partials, n: int, s: int, delta: int) -> int:
    """Combine partials c^(2 delta s_i) with rational Lagrange weights at 0.

    Weights are scaled by delta and any leftover denominator is cleared by
    an extra integer factor, then divided out of the exponent at the end.
    """
    N = n ** (s + 1)
    ns = n**s
    idx = [i for i, _ in partials]
    weights = {}
    for i in idx:
        w = Fraction(1)
        for j in idx:
            if j != i:
                w *= Fraction(-j, i - j)
        weights[i] = w * delta
    clear = math.lcm(*(w.denominator for w in weights.values())) if weights else 1
    acc = 1
    for i, v in partials:
        e = int(weights[i] * clear) * 2
        acc = acc * pow(v, e, N) % N
    scale = 4 * delta * delta * clear  # 2 * delta from the partials, 2 * delta * clear from the weights
    g = math.gcd(scale, ns)
    if g != 1:
        return -1
    return dj_dlog(n, s, acc) * pow(scale, -1, ns) % ns


def pedersen(P: int, g: int, h: int, m: int, r: int) -> int:
    return pow(g, m, P) * pow(h, r, P) % P


def pack(x, b: int) -> int:
    return sum(int(v) << (i * b) for i, v in enumerate(x))


def unpack(v: int, m: int, b: int) -> list[int]:
    return [(v >> (i * b)) & ((1 << b) - 1) for i in range(m)]


def plaintext_sum(xs) -> np.ndarray:
    return np.sum(np.stack([np.asarray(x, dtype=np.int64) for x in xs]), axis=0)


def binomial_3sigma(p: float, trials: int) -> float:
    return 3 * math.sqrt(p * (1 - p) / trials)


def fixed_point_forward(weights, biases, x, frac_bits: int):
    """Integer MLP: h <- ReLU((W h + b 2^(f l)) ) with no rescaling, last layer linear."""
    h = [int(v) for v in x]
    for l, (W, b) in enumerate(zip(weights, biases)):
        scale = 1 << (frac_bits * (l + 1))
        out = []
        for row, bias in zip(W, b):
            z = sum(int(w) * v for w, v in zip(row, h)) + int(bias) * scale
            out.append(z if l == len(weights) - 1 else max(z, 0))
        h = out
    return h
