"""Scripted misbehaviour for simulated rounds."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .. import aggregation as agg
from .. import encoding as enc
from .. import he
from .._rand import make_rng

BEHAVIOURS = (
    "drop_before_submit",
    "drop_before_reveal",
    "drop_in_decryption",
    "refuse_decrypt",
    "garbage",
    "wrong_key",
    "forged_proof",
    "no_proof",
)


@dataclass(frozen=True)
class AdversaryScript:
    """User indices per behaviour. Users not listed behave honestly."""

    drop_before_submit: frozenset = frozenset()
    drop_before_reveal: frozenset = frozenset()
    drop_in_decryption: frozenset = frozenset()
    refuse_decrypt: frozenset = frozenset()
    garbage: frozenset = frozenset()
    wrong_key: frozenset = frozenset()
    forged_proof: frozenset = frozenset()
    no_proof: frozenset = frozenset()

    def __post_init__(self):
        for name in BEHAVIOURS:
            object.__setattr__(self, name, frozenset(getattr(self, name)))

    def check(self, n_users: int) -> None:
        for name in BEHAVIOURS:
            bad = [u for u in getattr(self, name) if not 0 <= u < n_users]
            if bad:
                raise ValueError(f"{name}: user indices {bad} out of range")

    def behaviours_of(self, user: int) -> set[str]:
        return {name for name in BEHAVIOURS if user in getattr(self, name)}

    def corrupt_ciphertexts(self) -> frozenset:
        return self.garbage | self.wrong_key

    def expected_survivors(self, n_users: int) -> set[int]:
        """Users whose update must end up in the sum (forgers excluded)."""
        out = set(range(n_users))
        out -= self.drop_before_submit | self.drop_before_reveal | self.garbage | self.wrong_key
        out -= self.forged_proof | self.no_proof
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    round: agg.RoundConfig
    script: AdversaryScript = field(default_factory=AdversaryScript)
    name: str = ""

    def __post_init__(self):
        self.script.check(self.round.n_users)


@lru_cache(maxsize=4)
def _foreign_key(key_bits: int, level: int, allow_small: bool) -> he.HePublicKey:
    pk, _ = he.keygen(key_bits, level, b"foreign-key", allow_small=allow_small)
    return pk


class ScriptedUser(agg.UserAgent):
    """A user following an adversary script; honest where the script is silent.

    ``bad_x`` is the update submitted by forgers and by users whose model
    fails the check (``no_proof``).
    """

    def __init__(self, index, x, keys, config, script: AdversaryScript, rng=None, spec=None, bad_x=None):
        super().__init__(index, x, keys, config, rng, spec)
        self.script = script
        self.roles = script.behaviours_of(index)
        if self.roles & {"forged_proof", "no_proof"}:
            if bad_x is None:
                raise ValueError("forging users need a flagged update")
            self.x = np.asarray(bad_x, dtype=np.int64)

    def output(self) -> agg.UserRoundOutput:
        if self._output is not None:
            return self._output
        out = super().output()
        if "forged_proof" in self.roles and self.config.lam:
            from ..zkp import proof as zp

            forged = zp.prove_cheating(self.x, out.r, self.spec, self.config.lam, self.rng)
            out = agg.UserRoundOutput(out.ciphertext, zp.proof_to_bytes(forged), out.commitment, out.r)
        if "garbage" in self.roles:
            out = agg.UserRoundOutput(self._garbage(), out.proof, out.commitment, out.r)
        if "wrong_key" in self.roles:
            out = agg.UserRoundOutput(self._wrong_key(), out.proof, out.commitment, out.r)
        self._output = out
        return out

    def _garbage(self) -> bytes:
        pk = self.keys.pk
        if self.config.encoding == agg.PACKING:
            count = len(enc.segment_bounds(self.config.packing, enc.slots_per_ciphertext(pk, self.config.chunk_bits)))
            cts = []
            while len(cts) < count:
                v = self.rng.randrange(1, pk.ns1)
                if math.gcd(v, pk.n) == 1:
                    cts.append(he.Ciphertext(v, pk.s, pk.n))
            return agg.ciphertexts_to_bytes(cts)
        xs = [self.rng.randrange(self.keys.kem_p) for _ in range(self.config.vector_len)]
        key = enc.kem_keygen(self.keys.kem_p, self.rng)
        return enc.kem_to_bytes(enc.kem_encrypt(pk, xs, key, self.rng), self.config.kem_bits)

    def _wrong_key(self) -> bytes:
        other = _foreign_key(self.config.key_bits, self.config.level, self.config.allow_small_keys)
        keys = agg.RoundKeys(other, (), self.keys.pedersen, self.keys.kem_p)
        return agg.encrypt_update(self.x, self.config, keys, self.rng)

    def on_submit(self):
        if "drop_before_submit" in self.roles:
            return None
        return super().on_submit()

    def on_reveal(self):
        if "drop_before_reveal" in self.roles:
            return None
        return super().on_reveal()

    def on_decrypt(self, payload):
        if self.roles & {"drop_in_decryption", "refuse_decrypt", "drop_before_submit", "drop_before_reveal"}:
            return None
        return super().on_decrypt(payload)


@dataclass
class ScenarioOutcome:
    name: str
    result: agg.GlobalModelResult | None
    expected_sum: np.ndarray | None
    elapsed: float
    error: str = ""
    records: list = field(default_factory=list, repr=False)

    @property
    def correct(self) -> bool:
        return self.result is not None and self.expected_sum is not None and bool(
            np.array_equal(self.result.x_bar, self.expected_sum))


def run_scenario(scenario: ScenarioConfig, xs, keys: agg.RoundKeys | None = None, bad_x=None, spec=None) -> ScenarioOutcome:
    """Run one scripted round and compare with the plaintext sum over whoever was kept."""
    cfg = scenario.round
    keys = keys or agg.setup_keys(cfg)
    if cfg.lam and spec is None:
        spec = agg.circuit_spec(cfg, keys)
    agents = [ScriptedUser(i, x, keys, cfg, scenario.script, make_rng(f"user-{cfg.seed}-{i}"), spec, bad_x)
              for i, x in enumerate(xs)]
    start = time.perf_counter()
    try:
        result, records = agg.compute_global_model(agents, cfg, keys, spec=spec)
    except agg.ProtocolAbort as exc:
        return ScenarioOutcome(scenario.name, None, None, time.perf_counter() - start, str(exc),
                               getattr(exc, "records", []))
    kept_updates = [agents[u].x for u in result.included]
    expected = np.sum(kept_updates, axis=0) if kept_updates else None
    return ScenarioOutcome(scenario.name, result, expected, time.perf_counter() - start, "", records)


def standard_scenarios(base: agg.RoundConfig) -> list[ScenarioConfig]:
    """One scenario per misbehaviour, plus a mixed one."""
    n, t = base.n_users, base.t
    if n - t < 2 or n < 4:
        raise ValueError("standard scenarios need n_users >= max(4, t + 2)")
    spare = list(range(n))
    s = [
        ScenarioConfig(base, AdversaryScript(), "honest"),
        ScenarioConfig(base, AdversaryScript(drop_before_submit={n - 1}), "drop-before-submit"),
        ScenarioConfig(base, AdversaryScript(drop_before_reveal={n - 2}), "drop-before-reveal"),
        ScenarioConfig(base, AdversaryScript(drop_in_decryption=set(spare[: n - t])), "drop-in-decryption"),
        ScenarioConfig(base, AdversaryScript(refuse_decrypt={0}), "decryptor-refuses"),
        ScenarioConfig(base, AdversaryScript(garbage={1}), "one-garbage"),
        ScenarioConfig(base, AdversaryScript(garbage={1, n - 1}), "two-garbage"),
        ScenarioConfig(base, AdversaryScript(wrong_key={2}), "wrong-key"),
        ScenarioConfig(base, AdversaryScript(drop_before_submit={0}, garbage={2}, refuse_decrypt={3}), "mixed"),
    ]
    if base.lam:
        s.append(ScenarioConfig(base, AdversaryScript(forged_proof={1}), "forged-proof"))
        s.append(ScenarioConfig(base, AdversaryScript(no_proof={2}), "no-proof"))
    return s
