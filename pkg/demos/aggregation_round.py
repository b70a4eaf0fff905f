"""Walk through one aggregation round, then the same round with misbehaving users.

    python3 demos/aggregation_round.py
"""

import numpy as np

from zkagg import aggregation as agg
from zkagg.harness import adversary as adv
from zkagg.transcript import transcript_to_bytes


def main():
    cfg = agg.RoundConfig(n_users=6, t=3, vector_len=1000, seed=7)
    keys = agg.setup_keys(cfg)
    xs = agg.random_updates(np.random.default_rng(7), cfg.n_users, cfg.vector_len, cfg.range_bound)
    print(f"{cfg.n_users} users, threshold {cfg.t}, {cfg.vector_len} elements in [0, {cfg.range_bound})")
    print(f"slot width {cfg.chunk_bits} bits, key {keys.pk.key_bits} bits")

    result, records = agg.simulate_round(xs, cfg, keys)
    print(f"\nhonest round: sum correct = {np.array_equal(result.x_bar, agg.plaintext_sum(xs))}")
    print(f"transcript: {len(records)} messages, {len(transcript_to_bytes(records))} bytes")
    for entry in result.audit:
        print("  ", entry)

    script = adv.AdversaryScript(garbage={1, 4}, drop_before_reveal={2}, refuse_decrypt={0})
    out = adv.run_scenario(adv.ScenarioConfig(cfg, script, "garbage+dropout"), xs, keys)
    res = out.result
    print(f"\nscripted round ({out.elapsed:.2f} s)")
    print(f"  included {res.included}, flagged {sorted(res.flagged())}, dropped {sorted(res.dropped())}")
    print(f"  sum over included users correct = {out.correct}")
    for u, st in res.statuses.items():
        if st.reason:
            print(f"  user {u}: {st.state} ({st.reason})")


if __name__ == "__main__":
    main()
