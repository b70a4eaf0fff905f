import dataclasses
import struct

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
from zkagg.transcript import LiveChannel
from zkagg.zkp import proof as zp


def small_round(small_key, **kw):
    base = dict(n_users=5, t=3, vector_len=60, key_bits=256, allow_small_keys=True, seed=1)
    base.update(kw)
    cfg = agg.RoundConfig(**base)
    return cfg, agg.setup_keys(cfg, sk=small_key[1])


def updates(cfg, seed=0):
    return agg.random_updates(np.random.default_rng(seed), cfg.n_users, cfg.vector_len, cfg.range_bound)


@pytest.mark.parametrize("encoding", [agg.PACKING, agg.KEMDEM])
def test_honest_round_sums(small_key, encoding):
    cfg, keys = small_round(small_key, encoding=encoding)
    xs = updates(cfg)
    result, records = agg.simulate_round(xs, cfg, keys)
    assert result.x_bar.tolist() == oracles.plaintext_sum(xs).tolist()
    assert result.included == tuple(range(cfg.n_users)) and result.consistency
    assert not result.flagged() and not result.dropped()


def test_level_above_one(small_key):
    cfg, keys = small_round(small_key, level=3, vector_len=40)
    assert keys.pk.s == 3
    xs = updates(cfg, 1)
    result, _ = agg.simulate_round(xs, cfg, keys)
    assert result.x_bar.tolist() == oracles.plaintext_sum(xs).tolist()


def test_extreme_values_do_not_overflow(small_key):
    cfg, keys = small_round(small_key, n_users=4, t=2)
    xs = [np.full(cfg.vector_len, cfg.range_bound - 1) for _ in range(4)]
    result, _ = agg.simulate_round(xs, cfg, keys)
    assert (result.x_bar == 4 * (cfg.range_bound - 1)).all()


def test_round_is_deterministic_and_replays(small_key):
    cfg, keys = small_round(small_key)
    xs = updates(cfg, 2)
    r1, rec1 = agg.simulate_round(xs, cfg, keys)
    r2, rec2 = agg.simulate_round(xs, cfg, keys)
    assert rec1 == rec2
    again = agg.replay_round(rec1, cfg, keys.pk, keys.pedersen, keys.kem_p)
    assert again.x_bar.tolist() == r1.x_bar.tolist() and again.included == r1.included


def test_replay_detects_tampering(small_key):
    from zkagg.transcript import ReplayMismatch, Record

    cfg, keys = small_round(small_key)
    _, rec = agg.simulate_round(updates(cfg, 3), cfg, keys)
    # flip a byte in the announced aggregate digest
    i = next(k for k, r in enumerate(rec) if r.tag == "aggregate-fixed")
    bad = list(rec)
    bad[i] = Record(rec[i].sender, rec[i].recipient, rec[i].tag, bytes([rec[i].payload[0] ^ 1]) + rec[i].payload[1:])
    with pytest.raises(ReplayMismatch):
        agg.replay_round(bad, cfg, keys.pk, keys.pedersen)
    with pytest.raises(RuntimeError):
        agg.replay_round(rec + [rec[-1]], cfg, keys.pk, keys.pedersen)


def test_too_many_decryptors_missing(small_key):
    cfg, keys = small_round(small_key)
    script = adv.AdversaryScript(refuse_decrypt={0, 1, 2})
    out = adv.run_scenario(adv.ScenarioConfig(cfg, script), updates(cfg, 4), keys)
    assert out.result is None and "decryptors" in out.error


def test_threshold_unreachable_is_protocol_abort():
    with pytest.raises(agg.ThresholdUnreachable):
        agg.decryption_phase([], iter([]), None, 2)


def test_decryption_phase_replaces_silent_holders(small_key):
    pk, sk = small_key
    shares = he.split_key(sk, 2, 4)
    c = he.encrypt(pk, 77)
    audit = []

    def holder(i, honest):
        return i, (lambda a: [he.partial_decrypt(shares[i], x) for x in a]) if honest else (lambda a: None)

    got = agg.decryption_phase([c], [holder(0, False), holder(1, True), holder(2, False), holder(3, True)], pk, 2, audit)
    assert got == [77]
    assert ("decryptor-replaced", 0) in audit and ("decryptors", (1, 3)) in audit


def test_server_rejects_malformed_submissions(small_key):
    cfg, keys = small_round(small_key, n_users=4, t=2)
    xs = updates(cfg, 5)
    agents = [agg.UserAgent(i, x, keys, cfg) for i, x in enumerate(xs)]
    handlers = {a.index: a.handle for a in agents}
    handlers[2] = lambda tag, payload: b"junk" if tag == "submit" else None
    server = agg.Server(cfg, keys.pk, keys.pedersen, LiveChannel(handlers))
    result = server.run(range(4))
    assert result.flagged() == {2}
    assert result.x_bar.tolist() == oracles.plaintext_sum([xs[0], xs[1], xs[3]]).tolist()


def test_consistency_check(small_key):
    cfg, keys = small_round(small_key, n_users=2, t=1)
    xs = updates(cfg, 6)
    outs = [agg.user_round(x, keys, cfg, make_rng(i)) for i, x in enumerate(xs)]
    r_sum = cm.sum_r([o.r for o in outs], keys.pedersen.q)
    total = oracles.plaintext_sum(xs)
    assert agg.consistent(total, r_sum, [o.commitment for o in outs], cfg, keys.pedersen)
    total[0] += 1
    assert not agg.consistent(total, r_sum, [o.commitment for o in outs], cfg, keys.pedersen)
    # value too wide for a slot
    assert not agg.consistent(total * 1000, r_sum, [o.commitment for o in outs], cfg, keys.pedersen)


def test_user_round_validates_input(small_key):
    cfg, keys = small_round(small_key)
    with pytest.raises(ValueError):
        agg.user_round(np.zeros(cfg.vector_len - 1, int), keys, cfg)
    with pytest.raises(ValueError):
        agg.user_round(np.full(cfg.vector_len, cfg.range_bound), keys, cfg)


def test_round_config_validation():
    with pytest.raises(ValueError):
        agg.RoundConfig(n_users=3, t=4, vector_len=5)
    with pytest.raises(ValueError):
        agg.RoundConfig(n_users=3, t=2, vector_len=5, encoding="rot13")
    with pytest.raises(ValueError):
        agg.RoundConfig(n_users=3, t=2, vector_len=5, lam=2)  # proofs need model dims


def test_wire_formats_round_trip(small_key):
    pk, sk = small_key
    cts = [he.encrypt(pk, i) for i in range(3)]
    assert agg.ciphertexts_from_bytes(agg.ciphertexts_to_bytes(cts), pk) == cts
    q = cm.default_params().q
    assert agg.r_from_bytes(agg.r_to_bytes((1, 2, q - 1)), q) == (1, 2, q - 1)
    with pytest.raises(Exception):
        agg.r_from_bytes(agg.r_to_bytes((q,)), q)
    parts = [he.partial_decrypt(s, cts[0]) for s in he.split_key(sk, 2, 3)]
    assert agg.partials_from_bytes(agg.partials_to_bytes(parts)) == parts


def _leaks(x, payloads, params, pk, seg=4):
    """Does any recorded payload contain the update in a recognisable encoding?"""
    x = np.asarray(x, dtype=np.int64)
    needles = []
    for k in range(0, len(x) - seg + 1, seg):
        part = x[k: k + seg]
        needles += [part.astype(">i8").tobytes(), part.astype("<i8").tobytes(),
                    part.astype(">i4").tobytes(), part.astype("<i4").tobytes()]
    bounds = enc.segment_bounds(params, enc.slots_per_ciphertext(pk, params.element_bits))
    for a, b in bounds:
        v = oracles.pack(x[a:b], params.element_bits)
        raw = v.to_bytes(max(1, (v.bit_length() + 7) // 8), "big")
        needles += [raw[:16], raw[-16:]]
    needles = [n for n in needles if any(n)]
    return any(n in p for p in payloads for n in needles)


def test_transcript_never_contains_plaintext_updates(small_key):
    cfg, keys = small_round(small_key, n_users=4, t=2)
    xs = updates(cfg, 7)
    _, records = agg.simulate_round(xs, cfg, keys)
    payloads = [r.payload for r in records]
    for x in xs:
        assert not _leaks(x, payloads, cfg.packing, keys.pk)
    # the check does fire on a payload that carries an update
    assert _leaks(xs[0], [b"pad" + np.asarray(xs[0], ">i8").tobytes()], cfg.packing, keys.pk)
    a, b = enc.segment_bounds(cfg.packing, enc.slots_per_ciphertext(keys.pk, cfg.packing.element_bits))[0]
    packed = oracles.pack(xs[0][a:b], cfg.packing.element_bits)
    assert _leaks(xs[0], [b"pad" + packed.to_bytes((packed.bit_length() + 7) // 8, "big")], cfg.packing, keys.pk)


def test_announced_result_is_the_sum(small_key):
    cfg, keys = small_round(small_key, n_users=3, t=2)
    xs = updates(cfg, 8)
    _, records = agg.simulate_round(xs, cfg, keys)
    res = records[-1]
    assert res.tag == "result"
    (k,) = struct.unpack(">I", res.payload[:4])
    body = np.frombuffer(res.payload[4 + 4 * k:], dtype=">i8")
    assert k == 3 and body.tolist() == oracles.plaintext_sum(xs).tolist()


# --------------------------------------------------------------------------
# rounds with proofs


@pytest.fixture(scope="module")
def proof_round(small_key, toy_spec, fixtures0):
    cfg = agg.RoundConfig(n_users=4, t=2, vector_len=toy_spec.n_params, key_bits=256, allow_small_keys=True,
                          lam=2, dims=toy_spec.dims, validation=toy_spec.dataset, seed=3)
    keys = agg.setup_keys(cfg, sk=small_key[1])
    return cfg, keys


def test_proof_round_excludes_flagged_models(proof_round, toy_spec, fixtures0):
    cfg, keys = proof_round
    with pytest.raises(ValueError):
        agg.compute_global_model([], cfg, keys, spec=toy_spec)
    clean = M.flatten(fixtures0.clean)
    bad = M.flatten(fixtures0.backdoored)
    script = adv.AdversaryScript(no_proof={1})
    out = adv.run_scenario(adv.ScenarioConfig(cfg, script), [clean] * 4, keys, bad_x=bad)
    assert out.correct
    assert out.result.flagged() == {1}
    assert out.result.x_bar.tolist() == (3 * clean).tolist()


def test_forged_proofs_excluded_at_lambda_nine(toy_spec, fixtures0):
    """A cheater passes one repetition with probability 2/3; at nine the exclusion rate is 1 - (2/3)^9."""
    cfg = agg.RoundConfig(n_users=2, t=1, vector_len=toy_spec.n_params, lam=9, dims=toy_spec.dims,
                          validation=toy_spec.dataset, key_bits=256, allow_small_keys=True)
    server = agg.Server(cfg, None, toy_spec.pedersen, None, spec=toy_spec)
    x = M.flatten(fixtures0.backdoored)
    trials = 500
    excluded = 0
    for k in range(trials):
        rng = make_rng(f"forge-{k}")
        r = cm.random_r(toy_spec.pedersen, toy_spec.n_chunks, rng)
        cv = cm.commit(toy_spec.pedersen, cm.chunk_vector(x, toy_spec.pedersen, toy_spec.chunk_bits), r,
                       toy_spec.chunk_bits)
        data = zp.proof_to_bytes(zp.prove_cheating(x, r, toy_spec, 9, rng))
        excluded += not server._proof_ok(data, cv)
    target = 1 - (2 / 3) ** 9
    assert target == pytest.approx(0.974, abs=5e-4)
    assert excluded / trials >= target - oracles.binomial_3sigma(target, trials), excluded
