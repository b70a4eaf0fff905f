"""Fixed-base exponentiation with precomputed 8-bit windows."""

from __future__ import annotations

from gmpy2 import mpz

WINDOW = 8


class FixedBase:
    """Table of base^(d * 2^(8j)) for fast exponents below 2^bits."""

    def __init__(self, base: int, modulus: int, bits: int):
        self.P = mpz(modulus)
        self.nwin = -(-bits // WINDOW)
        self.table = []
        cur = mpz(base)
        for _ in range(self.nwin):
            row = [mpz(1)] * (1 << WINDOW)
            for d in range(1, 1 << WINDOW):
                row[d] = row[d - 1] * cur % self.P
            self.table.append(row)
            cur = row[-1] * cur % self.P
        self.mask = (1 << WINDOW) - 1

    def pow(self, e: int) -> mpz:
        if e >> (WINDOW * self.nwin):
            raise ValueError("exponent too large for the table")
        acc = mpz(1)
        P = self.P
        j = 0
        while e:
            d = e & self.mask
            if d:
                acc = acc * self.table[j][d] % P
            e >>= WINDOW
            j += 1
        return acc
