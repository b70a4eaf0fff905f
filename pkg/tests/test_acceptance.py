"""Acceptance suite: one test per criterion, at the stated tolerances."""

import math
import random
import time
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

import oracles
from zkagg import aggregation as agg
from zkagg import commitment as cm
from zkagg import encoding as enc
from zkagg import he
from zkagg import model as M
from zkagg._rand import make_rng
from zkagg.harness import adversary as adv
from zkagg.harness import bench
from zkagg.harness import fixtures as fxm
from zkagg.zkp import proof as zp


def test_c01_randomized_rounds_reproduce_plaintext_sum(key1024):
    _, sk = key1024
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    correct = 0
    for i in range(200):
        if i < 2:
            n, m = 16, 10_000  # the extreme corner is always covered
        else:
            n = int(rng.integers(1, 17))
            m = int(round(math.exp(rng.uniform(0, math.log(10_000)))))
        t = int(rng.integers(1, n + 1))
        cfg = agg.RoundConfig(n_users=n, t=t, vector_len=m, seed=i)
        keys = agg.setup_keys(cfg, sk=sk)
        xs = agg.random_updates(rng, n, m, cfg.range_bound)
        result, _ = agg.simulate_round(xs, cfg, keys)
        correct += np.array_equal(result.x_bar, oracles.plaintext_sum(xs))
    elapsed = time.perf_counter() - start
    assert correct == 200
    assert elapsed <= 300, elapsed


def test_c02_threshold_subsets(key1024):
    pk, sk = key1024
    rng = random.Random(2)
    for n in range(1, 7):
        for t in range(1, n + 1):
            shares = he.split_key(sk, t, n, rng)
            m = rng.randrange(pk.ns)
            c = he.encrypt(pk, m, rng)
            want = oracles.dj_decrypt(sk.p, sk.q, pk.s, c.value)
            assert want == m
            partials = [he.partial_decrypt(s, c) for s in shares]
            for sub in combinations(partials, t):
                assert he.combine_shares(sub, pk, t) == want
            delta = shares[0].delta
            for sub in combinations(partials, t - 1):
                got = oracles.lagrange_exponent_decrypt([(p.index, p.value) for p in sub], pk.n, pk.s, delta)
                assert got != want, (n, t, [p.index for p in sub])


def test_c03_expansion_factor():
    start = time.perf_counter()
    rows = bench.bench_expansion((1_000, 10_000, 100_000), key_bits=2048)
    elapsed = time.perf_counter() - start
    factors = [r.expansion for r in rows]
    assert factors[2] < 1.1
    assert factors[0] > factors[1] > factors[2]
    assert elapsed <= 600, elapsed


def test_c04_kem_dem_vectors(key1024):
    pk, sk = key1024
    rng = random.Random(4)
    p = enc.kem_prime(64, rng)
    assert p.bit_length() == 64
    exact = 0
    for _ in range(100):
        x = [rng.randrange(M.RANGE_BOUND) for _ in range(1000)]
        ct = enc.kem_encrypt(pk, x, enc.kem_keygen(p, rng), rng)
        slots = enc.kem_recover(pk, enc.kem_from_bytes(enc.kem_to_bytes(ct), pk))
        exact += [enc.kem_decode(he.decrypt(sk, c), p, pk.ns) for c in slots] == x
    assert exact == 100


def _commit(spec, x, rng):
    r = cm.random_r(spec.pedersen, spec.n_chunks, rng)
    return r, cm.commit(spec.pedersen, cm.chunk_vector(x, spec.pedersen, spec.chunk_bits), r, spec.chunk_bits)


def test_c05_completeness(fixtures0, full_spec):
    x = M.flatten(fixtures0.clean)
    accepted = 0
    for k in range(100):
        rng = make_rng(f"c5-{k}")
        r, cv = _commit(full_spec, x, rng)
        proof = zp.proof_from_bytes(zp.proof_to_bytes(zp.prove(x, r, full_spec, 5, rng)), full_spec)
        accepted += zp.verify(proof, cv, full_spec, 5)
    assert accepted == 100


def test_c06_soundness(fixtures0, toy_spec):
    assert (2 / 3) ** 7 == pytest.approx(0.0585, abs=5e-5)
    assert (2 / 3) ** 9 == pytest.approx(0.0260, abs=5e-5)
    x = M.flatten(fixtures0.backdoored)
    assert M.backdoor_check(fixtures0.backdoored, toy_spec.dataset).backdoored
    trials = 2000
    start = time.perf_counter()
    for lam in (1, 3, 5):
        rng = make_rng(f"c6-{lam}")
        r, cv = _commit(toy_spec, x, rng)
        accepted = sum(zp.verify(zp.prove_cheating(x, r, toy_spec, lam, rng), cv, toy_spec, lam) for _ in range(trials))
        p = (2 / 3) ** lam
        assert abs(accepted / trials - p) <= oracles.binomial_3sigma(p, trials), (lam, accepted)
    assert time.perf_counter() - start <= 1800


def test_c07_backdoor_detection_on_fixtures(fixtures0):
    fx = fixtures0
    assert M.backdoor_check(fx.clean, fx.validation).verdict == "clean"
    assert M.backdoor_check(fx.backdoored, fx.validation).verdict == "backdoored"
    assert fxm.trigger_success(fx.backdoored, fx.validation) >= Fraction(9, 10)
    assert M.accuracy(fx.clean, fx.validation) >= Fraction(85, 100)


def test_c08_commitment_consistency(key1024):
    _, sk = key1024
    rng = np.random.default_rng(8)
    for i in range(10):
        n = int(rng.integers(2, 9))
        cfg = agg.RoundConfig(n_users=n, t=int(rng.integers(1, n + 1)), vector_len=int(rng.integers(1, 400)), seed=i)
        keys = agg.setup_keys(cfg, sk=sk)
        agents = [agg.UserAgent(u, x, keys, cfg) for u, x in
                  enumerate(agg.random_updates(rng, n, cfg.vector_len, cfg.range_bound))]
        result, _ = agg.compute_global_model(agents, cfg, keys)
        outs = [agents[u].output() for u in result.included]
        assert cm.verify_open(keys.pedersen, cm.combine([o.commitment for o in outs]),
                              cm.chunk_vector(result.x_bar, keys.pedersen, cfg.chunk_bits),
                              cm.sum_r([o.r for o in outs], keys.pedersen.q))
    for i, bad in enumerate([{0}, {3}, {1, 4}, {0, 5}, {2, 3}]):
        cfg = agg.RoundConfig(n_users=6, t=3, vector_len=300, seed=100 + i, max_eliminations=2)
        keys = agg.setup_keys(cfg, sk=sk)
        xs = agg.random_updates(rng, 6, 300, cfg.range_bound)
        out = adv.run_scenario(adv.ScenarioConfig(cfg, adv.AdversaryScript(garbage=bad)), xs, keys)
        assert out.correct and out.result.flagged() == bad
        assert out.result.x_bar.tolist() == oracles.plaintext_sum([xs[u] for u in range(6) if u not in bad]).tolist()


def test_c09_complexity_shapes(fixtures0, full_spec):
    enc_rows = bench.bench_user_encrypt((2500, 5000, 10000), key_bits=1024, repeats=15)
    secs = [r.seconds for r in enc_rows]
    for a, b in zip(secs, secs[1:]):
        assert 1.5 <= b / a <= 3, secs

    srv = bench.bench_server((2, 4, 8, 16), m=10000, key_bits=1024)
    assert all(r.metric >= 0 for r in srv)
    assert bench.fit_r2([r.n_users for r in srv], [r.seconds for r in srv], 2) >= 0.9

    zk = [r for r in bench.bench_zkp((1, 3, 5, 7, 9), full_spec, fixtures0.clean, verify=False, repeats=5)
          if r.scenario == "prove"]
    assert bench.fit_r2([r.lam for r in zk], [r.seconds for r in zk], 1) >= 0.95


def _run_with_watchdog(fn, seconds=60):
    pool = ThreadPoolExecutor(max_workers=1)
    try:
        return pool.submit(fn).result(timeout=seconds)
    except FutureTimeout:
        pytest.fail(f"scenario exceeded the {seconds} s watchdog")
    finally:
        pool.shutdown(wait=False)


@pytest.mark.parametrize("with_proofs", [False, True], ids=["no-proofs", "proofs"])
def test_c10_scripted_scenarios(key1024, fixtures0, toy_spec, with_proofs):
    _, sk = key1024
    if with_proofs:
        cfg = agg.RoundConfig(n_users=6, t=3, vector_len=toy_spec.n_params, lam=3, dims=toy_spec.dims,
                              validation=toy_spec.dataset, seed=10)
        clean = M.flatten(fixtures0.clean)
        xs = [clean] * 6
        bad_x = M.flatten(fixtures0.backdoored)
    else:
        cfg = agg.RoundConfig(n_users=6, t=3, vector_len=2000, seed=10)
        xs = agg.random_updates(np.random.default_rng(10), 6, 2000, cfg.range_bound)
        bad_x = None
    keys = agg.setup_keys(cfg, sk=sk)
    scenarios = adv.standard_scenarios(cfg)
    assert {"drop-before-submit", "drop-before-reveal", "drop-in-decryption", "decryptor-refuses",
            "two-garbage"} <= {s.name for s in scenarios}
    for sc in scenarios:
        out = _run_with_watchdog(lambda: adv.run_scenario(sc, xs, keys, bad_x=bad_x))
        assert out.correct, (sc.name, out.error)
        honest = sc.script.expected_survivors(cfg.n_users)
        included = set(out.result.included)
        # a forged proof passes with probability (2/3)^lam, so a forger may survive
        assert honest <= included <= honest | sc.script.forged_proof, sc.name
        want = oracles.plaintext_sum([bad_x if u in sc.script.forged_proof else xs[u] for u in sorted(included)])
        assert out.result.x_bar.tolist() == want.tolist(), sc.name
