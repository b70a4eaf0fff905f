"""Prove that a model passes the pruning check without revealing it.

Uses the generated fixtures: the clean model gets a proof, the backdoored
model is refused, and a cheating prover is caught at the expected rate.

    python3 demos/backdoor_proof.py [lambda]
"""

import sys
import time

from zkagg import commitment as cm
from zkagg import model as M
from zkagg._rand import make_rng
from zkagg.harness import fixtures as fxm
from zkagg.zkp import proof as zp


def commit(spec, x, rng):
    r = cm.random_r(spec.pedersen, spec.n_chunks, rng)
    return r, cm.commit(spec.pedersen, cm.chunk_vector(x, spec.pedersen, spec.chunk_bits), r, spec.chunk_bits)


def main(lam=5):
    fx = fxm.make_fixtures(0)
    for name, model in (("clean", fx.clean), ("backdoored", fx.backdoored)):
        rep = M.backdoor_check(model, fx.validation)
        print(f"{name:>10}: neuron {rep.pruned_neuron}, correct {rep.base_correct} -> {rep.pruned_correct}"
              f" of {rep.size}, verdict {rep.verdict}")

    spec = fxm.circuit_for(fx)
    rng = make_rng("demo")
    x = M.flatten(fx.clean)
    r, cv = commit(spec, x, rng)
    start = time.perf_counter()
    proof = zp.prove(x, r, spec, lam, rng)
    t_prove = time.perf_counter() - start
    size = len(zp.proof_to_bytes(proof))
    start = time.perf_counter()
    ok = zp.verify(proof, cv, spec, lam)
    print(f"\nlambda={lam}: proof {size / 1e6:.2f} MB, prove {t_prove:.2f} s,"
          f" verify {time.perf_counter() - start:.2f} s, accepted={ok}")

    bad = M.flatten(fx.backdoored)
    rb, cvb = commit(spec, bad, rng)
    try:
        zp.prove(bad, rb, spec, lam, rng)
    except zp.PredicateFailed:
        print("backdoored model: honest prover refuses")

    toy = fxm.circuit_for(fx, fxm.toy_validation(fx, 16))
    rb, cvb = commit(toy, bad, rng)
    trials = 300
    passed = sum(zp.verify(zp.prove_cheating(bad, rb, toy, 1, rng), cvb, toy, 1) for _ in range(trials))
    print(f"cheating prover, one repetition: {passed}/{trials} accepted (expected about {2 / 3:.3f})")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
