"""Timing and size measurements, written as CSV rows.

Every column except ``seconds`` is a deterministic function of the
arguments and the seed.
"""

from __future__ import annotations

import csv
import gc
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .. import aggregation as agg
from .. import commitment as cm
from .. import encoding as enc
from .. import he
from .. import model as M
from .._rand import make_rng

TIMING_COLUMNS = ("seconds",)
EXPANSION_RANGE_BITS = 20  # 3-byte elements once 16 users' worth of slack is added
EXPANSION_USERS = 16


@dataclass
class BenchRecord:
    """One CSV row. ``expansion`` is user bytes over 3 bytes per element.

    ``metric`` depends on the bench: the decrypted checksum (server), the
    soundness error (2/3)^lam (prove) or 1.0 for an accepted proof (verify).
    """

    scenario: str
    m: int = 0
    n_users: int = 0
    t: int = 0
    key_bits: int = 0
    level: int = 0
    lam: int = 0
    user_bytes: int = 0
    server_bytes: int = 0
    expansion: float = 0.0
    metric: float = 0.0
    seconds: float = 0.0


def write_csv(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [f.name for f in fields(BenchRecord)]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for r in records:
            row = asdict(r)
            row["expansion"] = f"{r.expansion:.6f}"
            row["metric"] = f"{r.metric:.6g}"
            row["seconds"] = f"{r.seconds:.6f}"
            w.writerow(row)
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def fit_r2(x, y, degree: int) -> float:
    """Coefficient of determination of a least-squares polynomial fit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    coeffs = np.polyfit(x, y, degree)
    resid = y - np.polyval(coeffs, x)
    total = ((y - y.mean()) ** 2).sum()
    return 1.0 if total == 0 else float(1 - (resid ** 2).sum() / total)


def _timed(fn, repeats: int):
    """Best of ``repeats`` runs with the collector paused, as timeit does."""
    best = math.inf
    out = None
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            start = time.perf_counter()
            out = fn()
            best = min(best, time.perf_counter() - start)
    finally:
        if enabled:
            gc.enable()
    return out, best


def _level_one_key(key_bits: int, seed: int):
    return he.keygen(key_bits, 1, f"bench-key-{key_bits}-{seed}".encode(), allow_small=key_bits < 1024)


def bench_user_encrypt(ms=(2500, 5000, 10000), key_bits: int = 1024, n_users: int = 16,
                       range_bound: int = M.RANGE_BOUND, seed: int = 0, repeats: int = 15) -> list[BenchRecord]:
    """Packing plus encryption of one update, at the fixed level s = 1."""
    pk, _ = _level_one_key(key_bits, seed)
    data = np.random.default_rng(seed)
    he.encrypt(pk, 1, make_rng(0))  # build the randomizer table outside the timing
    out = []
    for m in ms:
        params = enc.PackingParams.for_users(m, range_bound, n_users)
        x = data.integers(0, range_bound, m)
        cts, secs = _timed(lambda: enc.pack_encrypt(pk, x, params, make_rng(f"bench-{seed}-{m}")), repeats)
        size = len(agg.ciphertexts_to_bytes(cts))
        out.append(BenchRecord("user-encrypt", m, n_users, 0, key_bits, 1, 0, size, 0,
                               enc.expansion_factor(size, m) if m else 0.0, 0.0, secs))
    return out


def bench_expansion(ms=(1000, 10000, 100000), key_bits: int = 2048, seed: int = 0) -> list[BenchRecord]:
    """Serialized size of one packed ciphertext at the smallest level that holds all m elements.

    Elements are 3 bytes: 20 value bits plus 4 bits of headroom for 16 users.
    """
    _, sk = _level_one_key(key_bits, seed)
    data = np.random.default_rng(seed)
    out = []
    for m in ms:
        params = enc.PackingParams.for_users(m, 1 << EXPANSION_RANGE_BITS, EXPANSION_USERS)
        b = params.element_bits
        level = enc.choose_level(m, b, sk.pk.n.bit_length() - 1)
        start = time.perf_counter()
        pk, _ = he.at_level(sk, level, f"bench-level-{level}".encode())
        x = data.integers(0, 1 << EXPANSION_RANGE_BITS, m)
        cts = enc.pack_encrypt(pk, x, params, make_rng(f"bench-exp-{seed}-{m}"))
        secs = time.perf_counter() - start
        if len(cts) != 1:
            raise AssertionError("expansion bench expects a single ciphertext")
        size = len(enc.ciphertext_to_bytes(cts[0]))
        out.append(BenchRecord("expansion", m, EXPANSION_USERS, 0, key_bits, level, 0, size, 0,
                               enc.expansion_factor(size, m), 0.0, secs))
    return out


def bench_server(n_list=(2, 4, 8, 16), m: int = 10000, key_bits: int = 1024,
                 range_bound: int = M.RANGE_BOUND, seed: int = 0, repeats: int = 1) -> list[BenchRecord]:
    """Server aggregation plus threshold decryption with every user a decryptor (t = n)."""
    _, sk = _level_one_key(key_bits, seed)
    data = np.random.default_rng(seed)
    out = []
    for n in n_list:
        cfg = agg.RoundConfig(n_users=n, t=n, vector_len=m, range_bound=range_bound, key_bits=key_bits,
                              seed=seed, allow_small_keys=key_bits < 1024)
        keys = agg.setup_keys(cfg, sk=sk)
        rng = make_rng(f"bench-server-{seed}-{n}")
        updates = [enc.pack_encrypt(keys.pk, x, cfg.packing, rng)
                   for x in agg.random_updates(data, n, m, range_bound)]

        def server():
            total = agg.server_aggregate(updates)
            holders = ((u, lambda c, _u=u: [he.partial_decrypt(keys.share_for(_u), ct) for ct in c])
                       for u in range(n))
            return agg.decode(agg.decryption_phase(total, holders, keys.pk, cfg.t), cfg, keys)

        x_bar, secs = _timed(server, repeats)
        user = len(agg.ciphertexts_to_bytes(updates[0]))
        sent = cfg.t * user  # the aggregate goes to each decryptor
        out.append(BenchRecord("server", m, n, n, key_bits, 1, 0, user, sent, enc.expansion_factor(user, m),
                               float(int(np.asarray(x_bar).sum())), secs))
    return out


def bench_zkp(
    lams=(1, 3, 5, 7, 9), spec=None, model=None, seed: int = 0, verify: bool = True, repeats: int = 1
) -> list[BenchRecord]:
    """Prove (and verify) one honest model at each repetition count."""
    from ..zkp import proof as zp

    if spec is None or model is None:
        from .fixtures import circuit_for, make_fixtures

        fx = make_fixtures(seed)
        model = fx.clean
        spec = circuit_for(fx)
    x = M.flatten(model)
    r = cm.random_r(spec.pedersen, spec.n_chunks, make_rng(f"bench-zkp-r-{seed}"))
    cv = cm.commit(spec.pedersen, cm.chunk_vector(x, spec.pedersen, spec.chunk_bits), r, spec.chunk_bits)
    zp.prove(x, r, spec, 1, make_rng("warm-up"))  # jit compilation
    out = []
    for lam in lams:
        proof, secs = _timed(lambda: zp.prove(x, r, spec, lam, make_rng(f"bench-zkp-{seed}-{lam}")), repeats)
        size = len(zp.proof_to_bytes(proof))
        out.append(BenchRecord("prove", spec.n_params, 0, 0, 0, 0, lam, size, 0, 0.0, (2 / 3) ** lam, secs))
        if verify:
            start = time.perf_counter()
            ok = zp.verify(proof, cv, spec, lam)
            secs = time.perf_counter() - start
            out.append(BenchRecord("verify", spec.n_params, 0, 0, 0, 0, lam, size, 0, 0.0, float(ok), secs))
    return out
