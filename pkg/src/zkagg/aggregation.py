"""One round of private aggregation with proofs and commitment checks.

Message flow (all server requests go through a channel so the round can
be recorded and replayed):

1. ``submit``: each user sends its encrypted update, a proof that its model
   passes the backdoor check, and a Pedersen commitment to the update.
2. The server keeps users whose proofs verify and multiplies their
   ciphertexts.
3. ``reveal-r``: with the aggregate fixed, users send their commitment
   randomness. Users who stay silent are removed and the aggregate is
   recomputed.
4. ``decrypt``: t live share holders return partial decryptions; holders
   that do not answer are replaced.
5. The decrypted sum must open the product of the kept commitments. If it
   does not, the server retries without single users, then pairs, and so
   on up to ``max_eliminations``.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import _bytes, commitment as cm, encoding as enc, he
from . import model as mdl
from ._rand import make_rng
from .transcript import LiveChannel, ReplayChannel

PACKING = "packing"
KEMDEM = "kemdem"

ACTIVE = "active"
DROPPED = "dropped"
FLAGGED = "flagged"


class ProtocolAbort(RuntimeError):
    """The round cannot finish; ``audit`` carries what happened so far."""

    def __init__(self, message: str, audit=None):
        super().__init__(message)
        self.audit = list(audit or [])


class ThresholdUnreachable(ProtocolAbort):
    pass


@dataclass(frozen=True, eq=False)
class RoundConfig:
    n_users: int
    t: int
    vector_len: int
    range_bound: int = mdl.RANGE_BOUND
    key_bits: int = 1024
    level: int = 1
    lam: int = 0
    defense: mdl.DefenseParams = field(default_factory=mdl.DefenseParams)
    seed: int = 0
    max_eliminations: int = 2
    encoding: str = PACKING
    kem_bits: int = enc.KEM_L_DEFAULT
    dims: tuple[int, ...] | None = None
    validation: mdl.Dataset | None = field(default=None, repr=False)
    allow_small_keys: bool = False

    def __post_init__(self):
        if not 1 <= self.t <= self.n_users:
            raise ValueError("need 1 <= t <= n_users")
        if self.vector_len < 1 or self.range_bound < 2:
            raise ValueError("vector_len and range_bound must be positive")
        if self.level < 1 or self.lam < 0 or self.max_eliminations < 0:
            raise ValueError("invalid level, lambda or elimination bound")
        if self.encoding not in (PACKING, KEMDEM):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.encoding == KEMDEM:
            if self.level != 1:
                raise ValueError("KEM-DEM runs on the Paillier level s = 1")
            if 1 << (self.kem_bits - 1) <= self.n_users * self.range_bound:
                raise ValueError("KEM prime too small for the summed range")
        if self.lam:
            if self.dims is None or self.validation is None:
                raise ValueError("proofs need model dims and a validation set")
            need = sum((a + 1) * b for a, b in zip(self.dims[:-1], self.dims[1:]))
            if need != self.vector_len:
                raise ValueError("vector_len does not match the model dims")
        if self.packing.element_bits > cm.DEFAULT_Q_BITS - 1:
            raise ValueError("slots wider than a commitment chunk")

    @property
    def packing(self) -> enc.PackingParams:
        return enc.PackingParams.for_users(self.vector_len, self.range_bound, self.n_users)

    @property
    def chunk_bits(self) -> int:
        return self.packing.element_bits

    def capacity_level(self) -> int:
        """Level at which the whole vector fits one ciphertext."""
        return enc.choose_level(self.vector_len, self.chunk_bits, self.key_bits)


@dataclass(frozen=True, eq=False)
class RoundKeys:
    pk: he.HePublicKey
    shares: tuple[he.KeyShare, ...] = field(repr=False)
    pedersen: cm.PedersenParams = field(repr=False)
    kem_p: int | None = None
    sk: he.HeSecretKey | None = field(default=None, repr=False)  # dealer copy, test oracle only

    def share_for(self, user: int) -> he.KeyShare:
        return self.shares[user]


def setup_keys(config: RoundConfig, rng=None, pedersen: cm.PedersenParams | None = None,
               sk: he.HeSecretKey | None = None) -> RoundKeys:
    """Trusted dealer: HE key pair at the round's level, shares, KEM prime."""
    rng = make_rng(rng if rng is not None else f"keys-{config.seed}")
    if sk is None:
        pk, sk = he.keygen(config.key_bits, config.level, rng.randbytes(32), allow_small=config.allow_small_keys)
    elif sk.pk.s != config.level:
        pk, sk = he.at_level(sk, config.level, rng.randbytes(32))
    else:
        pk = sk.pk
    shares = tuple(he.split_key(sk, config.t, config.n_users, rng))
    kem_p = enc.kem_prime(config.kem_bits, rng) if config.encoding == KEMDEM else None
    return RoundKeys(pk, shares, pedersen or cm.default_params(), kem_p, sk)


def circuit_spec(config: RoundConfig, keys: RoundKeys):
    from .zkp.circuit import CircuitSpec

    return CircuitSpec(config.dims, config.validation, config.defense, keys.pedersen, config.chunk_bits,
                       range_bound=config.range_bound)


# --------------------------------------------------------------------------
# wire formats


def ciphertexts_to_bytes(cts) -> bytes:
    parts = [enc.ciphertext_to_bytes(c) for c in cts]
    return struct.pack(">I", len(parts)) + b"".join(struct.pack(">I", len(p)) + p for p in parts)


def ciphertexts_from_bytes(data: bytes, pk: he.HePublicKey) -> list[he.Ciphertext]:
    buf = io.BytesIO(data)
    out = []
    for _ in range(_bytes.read_u32(buf)):
        out.append(enc.ciphertext_from_bytes(_bytes.read_exact(buf, _bytes.read_u32(buf)), pk))
    _bytes.expect_end(buf)
    return out


def _blob(buf, data: bytes) -> None:
    buf.write(struct.pack(">I", len(data)))
    buf.write(data)


def _read_blob(buf) -> bytes:
    return _bytes.read_exact(buf, _bytes.read_u32(buf))


@dataclass(frozen=True)
class Submission:
    payload: bytes  # encrypted update
    proof: bytes  # empty when the user has no proof
    commitment: bytes

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        for part in (self.payload, self.proof, self.commitment):
            _blob(buf, part)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Submission":
        buf = io.BytesIO(data)
        parts = [_read_blob(buf) for _ in range(3)]
        _bytes.expect_end(buf)
        return cls(*parts)


def r_to_bytes(r) -> bytes:
    return struct.pack(">I", len(r)) + b"".join(int(v).to_bytes(32, "big") for v in r)


def r_from_bytes(data: bytes, q: int) -> tuple[int, ...]:
    buf = io.BytesIO(data)
    r = tuple(int.from_bytes(_bytes.read_exact(buf, 32), "big") for _ in range(_bytes.read_u32(buf)))
    _bytes.expect_end(buf)
    if any(v >= q for v in r):
        raise _bytes.FormatError("randomness outside Z_q")
    return r


def partials_to_bytes(partials) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack(">I", len(partials)))
    for pd in partials:
        buf.write(struct.pack(">I", pd.index))
        _bytes.write_bigint(buf, pd.value)
    return buf.getvalue()


def partials_from_bytes(data: bytes) -> list[he.PartialDecryption]:
    buf = io.BytesIO(data)
    out = []
    for _ in range(_bytes.read_u32(buf)):
        idx = _bytes.read_u32(buf)
        out.append(he.PartialDecryption(idx, _bytes.read_bigint(buf)))
    _bytes.expect_end(buf)
    return out


# --------------------------------------------------------------------------
# user side


@dataclass(frozen=True)
class UserRoundOutput:
    ciphertext: bytes
    proof: bytes
    commitment: cm.CommitmentVector
    r: tuple[int, ...] = field(repr=False)  # released in the decryption phase

    def submission(self) -> Submission:
        return Submission(self.ciphertext, self.proof, cm.commitment_to_bytes(self.commitment))


def encrypt_update(x, config: RoundConfig, keys: RoundKeys, rng) -> bytes:
    if config.encoding == PACKING:
        return ciphertexts_to_bytes(enc.pack_encrypt(keys.pk, x, config.packing, rng))
    key = enc.kem_keygen(keys.kem_p, rng)
    return enc.kem_to_bytes(enc.kem_encrypt(keys.pk, x, key, rng), config.kem_bits)


def user_round(x, keys: RoundKeys, config: RoundConfig, rng=None, spec=None) -> UserRoundOutput:
    """Encrypt, commit and (when lam > 0) prove; no proof if the model is flagged."""
    rng = make_rng(rng)
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (config.vector_len,):
        raise ValueError("update has the wrong length")
    if x.min() < 0 or x.max() >= config.range_bound:
        raise ValueError("update element outside [0, range_bound)")
    b = config.chunk_bits
    chunks = cm.chunk_vector(x, keys.pedersen, b)
    r = tuple(cm.random_r(keys.pedersen, len(chunks), rng))
    commitment = cm.commit(keys.pedersen, chunks, r, b)
    proof = b""
    if config.lam:
        from .zkp import proof as zp

        spec = spec or circuit_spec(config, keys)
        try:
            proof = zp.proof_to_bytes(zp.prove(x, r, spec, config.lam, rng))
        except zp.PredicateFailed:
            proof = b""
    return UserRoundOutput(encrypt_update(x, config, keys, rng), proof, commitment, r)


class UserAgent:
    """Honest participant answering server requests."""

    def __init__(self, index: int, x, keys: RoundKeys, config: RoundConfig, rng=None, spec=None):
        self.index = index
        self.x = np.asarray(x, dtype=np.int64)
        self.keys = keys
        self.config = config
        self.rng = make_rng(rng if rng is not None else f"user-{config.seed}-{index}")
        self.spec = spec
        self._output: UserRoundOutput | None = None

    @property
    def share(self) -> he.KeyShare:
        return self.keys.share_for(self.index)

    def output(self) -> UserRoundOutput:
        if self._output is None:
            self._output = user_round(self.x, self.keys, self.config, self.rng, self.spec)
        return self._output

    def handle(self, tag: str, payload: bytes) -> bytes | None:
        if tag == "submit":
            return self.on_submit()
        if tag == "reveal-r":
            return self.on_reveal()
        if tag == "decrypt":
            return self.on_decrypt(payload)
        return None

    def on_submit(self) -> bytes | None:
        return self.output().submission().to_bytes()

    def on_reveal(self) -> bytes | None:
        return r_to_bytes(self.output().r)

    def on_decrypt(self, payload: bytes) -> bytes | None:
        cts = ciphertexts_from_bytes(payload, self.keys.pk)
        return partials_to_bytes([he.partial_decrypt(self.share, c) for c in cts])


# --------------------------------------------------------------------------
# server side building blocks


def server_aggregate(updates) -> list[he.Ciphertext]:
    """Position-wise product of the users' ciphertext lists."""
    updates = [list(u) for u in updates]
    if not updates:
        raise ValueError("nothing to aggregate")
    width = len(updates[0])
    if any(len(u) != width for u in updates):
        raise ValueError("updates differ in ciphertext count")
    return [he.hom_sum(col) for col in zip(*updates)]


def decryption_phase(aggregate, holders, pk: he.HePublicKey, t: int, audit=None):
    """Ask holders in order until t answer; returns combined plaintexts.

    ``holders`` yields (user, ask) pairs where ``ask(aggregate)`` returns a
    list of partial decryptions or None.
    """
    audit = audit if audit is not None else []
    got: list[tuple[int, list[he.PartialDecryption]]] = []
    for user, ask in holders:
        if len(got) == t:
            break
        partials = ask(aggregate)
        if partials is None or len(partials) != len(aggregate):
            audit.append(("decryptor-replaced", user))
            continue
        got.append((user, partials))
    if len(got) < t:
        raise ThresholdUnreachable(f"only {len(got)} of {t} decryptors answered", audit)
    audit.append(("decryptors", tuple(u for u, _ in got)))
    return [he.combine_shares([p[k] for _, p in got], pk, t) for k in range(len(aggregate))]


def decode(values, config: RoundConfig, keys: RoundKeys) -> np.ndarray:
    if config.encoding == PACKING:
        return enc.unpack_segments(values, config.packing, keys.pk)
    out = [enc.kem_decode(v, keys.kem_p, keys.pk.ns) for v in values]
    bound = config.n_users * (config.range_bound - 1)
    if any(not 0 <= v <= bound for v in out):
        raise ValueError("decrypted sum outside the possible range")
    return np.array(out, dtype=np.int64)


def consistent(x_bar, r_sum, commitments, config: RoundConfig, params: cm.PedersenParams) -> bool:
    """Does the product of commitments open to (x_bar, r_sum)?"""
    try:
        chunks = cm.chunk_vector(np.asarray(x_bar, dtype=np.int64), params, config.chunk_bits)
    except ValueError:
        return False
    return cm.verify_open(params, cm.combine(commitments), chunks, r_sum)


@dataclass(frozen=True)
class UserStatus:
    state: str
    reason: str = ""


@dataclass
class GlobalModelResult:
    x_bar: np.ndarray
    included: tuple[int, ...]
    statuses: dict[int, UserStatus]
    audit: list = field(default_factory=list)
    consistency: bool = False

    def flagged(self) -> set[int]:
        return {u for u, st in self.statuses.items() if st.state == FLAGGED}

    def dropped(self) -> set[int]:
        return {u for u, st in self.statuses.items() if st.state == DROPPED}


def _digest(parts) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(struct.pack(">I", len(p)) + p)
    return h.digest()


class Server:
    """The server's state machine for one round. It never sees a plaintext update."""

    def __init__(self, config: RoundConfig, pk: he.HePublicKey, pedersen: cm.PedersenParams, channel,
                 kem_p: int | None = None, spec=None):
        self.config = config
        self.pk = pk
        self.pedersen = pedersen
        self.channel = channel
        self.kem_p = kem_p
        self.spec = spec
        self.audit: list = []
        self.statuses: dict[int, UserStatus] = {}

    # parsing -------------------------------------------------------------
    def _parse_update(self, payload: bytes):
        if self.config.encoding == PACKING:
            cts = ciphertexts_from_bytes(payload, self.pk)
            expected = len(enc.segment_bounds(self.config.packing, enc.slots_per_ciphertext(self.pk, self.config.chunk_bits)))
            if len(cts) != expected:
                raise _bytes.FormatError("wrong number of ciphertexts")
            return cts
        ct = enc.kem_from_bytes(payload, self.pk, self.config.kem_bits)
        if ct.m != self.config.vector_len or ct.p != self.kem_p:
            raise _bytes.FormatError("KEM-DEM ciphertext does not match the round")
        return enc.kem_recover(self.pk, ct)

    def _flag(self, user: int, reason: str, state: str = FLAGGED):
        self.statuses[user] = UserStatus(state, reason)
        self.audit.append((state, user, reason))

    # phases ----------------------------------------------------------------
    def collect(self, users) -> dict[int, tuple[list, cm.CommitmentVector]]:
        kept = {}
        n_chunks = cm.chunk_count(self.config.vector_len, self.pedersen, self.config.chunk_bits)
        for u in users:
            reply = self.channel.request(u, "submit")
            if reply is None:
                self._flag(u, "no submission", DROPPED)
                continue
            try:
                sub = Submission.from_bytes(reply)
                cts = self._parse_update(sub.payload)
                cv = cm.commitment_from_bytes(sub.commitment, self.pedersen, self.config.chunk_bits)
                # elements outside the subgroup cannot open, so the consistency check catches them
                if len(cv) != n_chunks:
                    raise _bytes.FormatError("bad commitment")
            except (ValueError, _bytes.FormatError, he.CiphertextError) as exc:
                self._flag(u, f"malformed submission: {exc}")
                continue
            if self.config.lam and not self._proof_ok(sub.proof, cv):
                self._flag(u, "missing or invalid proof")
                continue
            kept[u] = (cts, cv)
        self.audit.append(("proofs-accepted", tuple(sorted(kept))))
        return kept

    def _proof_ok(self, data: bytes, cv) -> bool:
        from .zkp import proof as zp

        if not data:
            return False
        try:
            proof = zp.proof_from_bytes(data, self.spec)
        except (ValueError, _bytes.FormatError):
            return False
        return zp.verify(proof, cv, self.spec, self.config.lam)

    def reveal(self, kept) -> dict[int, tuple[int, ...]]:
        fixed = _digest([ciphertexts_to_bytes(server_aggregate([kept[u][0] for u in sorted(kept)]))]) if kept else b""
        self.channel.announce("aggregate-fixed", fixed)
        rs = {}
        n_chunks = cm.chunk_count(self.config.vector_len, self.pedersen, self.config.chunk_bits)
        for u in sorted(kept):
            reply = self.channel.request(u, "reveal-r", fixed)
            try:
                r = r_from_bytes(reply, self.pedersen.q) if reply is not None else None
            except _bytes.FormatError:
                r = None
            if r is None or len(r) != n_chunks:
                self._flag(u, "did not release commitment randomness", DROPPED)
                continue
            rs[u] = r
        return rs

    def _holders(self):
        order = [u for u in range(self.config.n_users)
                 if self.statuses.get(u, UserStatus(ACTIVE)).state != DROPPED]
        rng = make_rng(f"decryptors-{self.config.seed}")
        rng.shuffle(order)
        for u in order:
            def ask(agg, _u=u):
                reply = self.channel.request(_u, "decrypt", ciphertexts_to_bytes(agg))
                if reply is None:
                    return None
                try:
                    return partials_from_bytes(reply)
                except (ValueError, _bytes.FormatError):
                    return None
            yield u, ask

    def decrypt_subset(self, members, kept):
        agg = server_aggregate([kept[u][0] for u in members])
        values = decryption_phase(agg, self._holders(), self.pk, self.config.t, self.audit)
        try:
            return decode(values, self.config, RoundKeys(self.pk, (), self.pedersen, self.kem_p))
        except ValueError:
            return None

    def check(self, members, kept, rs) -> tuple[bool, np.ndarray | None]:
        x_bar = self.decrypt_subset(members, kept)
        if x_bar is None:
            return False, None
        r_sum = cm.sum_r([rs[u] for u in members], self.pedersen.q)
        ok = consistent(x_bar, r_sum, [kept[u][1] for u in members], self.config, self.pedersen)
        self.audit.append(("consistency", tuple(members), ok))
        return ok, x_bar

    def eliminate(self, members, kept, rs):
        """Largest subset (fewest removals, fixed order) whose sum is consistent."""
        for k in range(0, min(self.config.max_eliminations, len(members) - 1) + 1):
            for removed in combinations(members, k):
                cand = [u for u in members if u not in removed]
                ok, x_bar = self.check(cand, kept, rs)
                if ok:
                    for u in removed:
                        self._flag(u, "inconsistent with its commitment")
                    return cand, x_bar
        raise ProtocolAbort("no consistent subset within the elimination bound", self.audit)

    def run(self, users) -> GlobalModelResult:
        kept = self.collect(users)
        rs = self.reveal(kept)
        members = sorted(rs)
        if not members:
            raise ProtocolAbort("no submissions left to aggregate", self.audit)
        members, x_bar = self.eliminate(members, kept, rs)
        for u in members:
            self.statuses.setdefault(u, UserStatus(ACTIVE))
        for u in range(self.config.n_users):
            self.statuses.setdefault(u, UserStatus(DROPPED, "not selected"))
        self.channel.announce("result", _result_bytes(x_bar, members))
        return GlobalModelResult(np.asarray(x_bar, dtype=np.int64), tuple(members), dict(sorted(self.statuses.items())),
                                 self.audit, True)


def _result_bytes(x_bar, members) -> bytes:
    return (struct.pack(">I", len(members)) + b"".join(struct.pack(">I", u) for u in members)
            + np.asarray(x_bar, dtype=">i8").tobytes())


def eliminate_malicious(server: Server, kept, rs):
    return server.eliminate(sorted(rs), kept, rs)


def compute_global_model(agents, config: RoundConfig, keys: RoundKeys, participants=None, spec=None):
    """Run a full round against in-process agents; returns (result, transcript records)."""
    if config.lam and spec is None:
        spec = circuit_spec(config, keys)
    if spec is not None and spec.chunk_bits != config.chunk_bits:
        raise ValueError("circuit slot width differs from the round's packing width")
    for a in agents:
        if a.spec is None:
            a.spec = spec
    channel = LiveChannel({a.index: a.handle for a in agents})
    server = Server(config, keys.pk, keys.pedersen, channel, keys.kem_p, spec)
    users = sorted(a.index for a in agents) if participants is None else list(participants)
    try:
        result = server.run(users)
    except ProtocolAbort as exc:
        exc.records = channel.records
        raise
    return result, channel.records


def replay_round(records, config: RoundConfig, pk: he.HePublicKey, pedersen: cm.PedersenParams,
                 kem_p: int | None = None, spec=None, participants=None) -> GlobalModelResult:
    """Re-run the server on a recorded transcript; raises on any divergence."""
    if config.lam and spec is None:
        spec = circuit_spec(config, RoundKeys(pk, (), pedersen, kem_p))
    channel = ReplayChannel(records)
    server = Server(config, pk, pedersen, channel, kem_p, spec)
    users = list(range(config.n_users)) if participants is None else list(participants)
    result = server.run(users)
    if not channel.finished():
        raise RuntimeError("transcript has trailing records")
    return result


def simulate_round(xs, config: RoundConfig, keys: RoundKeys | None = None, agent_factory=None, spec=None):
    """Honest (or scripted) round over the update vectors ``xs``."""
    keys = keys or setup_keys(config)
    if config.lam and spec is None:
        spec = circuit_spec(config, keys)
    factory = agent_factory or (lambda i, x: UserAgent(i, x, keys, config, spec=spec))
    agents = [factory(i, x) for i, x in enumerate(xs)]
    return compute_global_model(agents, config, keys, spec=spec)


def plaintext_sum(xs, members=None) -> np.ndarray:
    xs = [np.asarray(x, dtype=np.int64) for x in xs]
    members = range(len(xs)) if members is None else members
    out = np.zeros_like(xs[0])
    for u in members:
        out += xs[u]
    return out


def random_updates(rng: np.random.Generator, n_users: int, m: int, range_bound: int) -> list[np.ndarray]:
    return [rng.integers(0, range_bound, size=m, dtype=np.int64) for _ in range(n_users)]


__all__ = [
    "ACTIVE", "DROPPED", "FLAGGED", "KEMDEM", "PACKING", "GlobalModelResult", "ProtocolAbort", "RoundConfig",
    "RoundKeys", "Server", "Submission", "ThresholdUnreachable", "UserAgent", "UserRoundOutput", "UserStatus",
    "compute_global_model", "consistent", "decode", "decryption_phase", "eliminate_malicious", "plaintext_sum",
    "random_updates", "replay_round", "server_aggregate", "setup_keys", "simulate_round", "user_round",
]
