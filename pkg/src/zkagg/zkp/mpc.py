"""Three-party emulation of the circuit and the matching two-view replay.

Party i holds an additive share of every wire. A multiplication gate
computes, for each i (indices mod 3),

    z_i = a_i (b_i + b_{i+1}) + a_{i+1} b_i + R_i - R_{i+1}

where R_i comes from party i's gate tape. Party i's output depends only on
the views of parties i and i+1, so revealing views e and e+1 lets the
verifier recompute every output of party e and compare it with the record.

Model shares are plain integers so that the per-party Pedersen outputs
multiply to the commitment of the actual model vector. Parties 0 and 1
derive theirs from their seeds in [0, p); party 2's share is explicit.
Witness inputs (bit decompositions) follow the same pattern in F_p.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field

import numpy as np

from ..commitment import PedersenParams, commit_one
from . import field as F
from .circuit import CircuitError, CircuitSpec, Runtime, evaluate

SEED_BYTES = 32
_R_BYTES = 48


def _rng_bytes(rng, n):
    return rng.randbytes(n) if rng is not None else secrets.token_bytes(n)


def model_share_from_seed(seed: bytes, m: int) -> np.ndarray:
    return F.expand(seed, b"model", m).astype(np.int64)


def r_share_from_seed(seed: bytes, count: int, q: int) -> tuple[int, ...]:
    raw = hashlib.shake_256(b"commit-r" + seed).digest(_R_BYTES * count)
    return tuple(int.from_bytes(raw[i:i + _R_BYTES], "big") % q for i in range(0, len(raw), _R_BYTES))


@dataclass(frozen=True, eq=False)
class InputShares:
    seeds: tuple[bytes, bytes, bytes]
    model: tuple[np.ndarray, np.ndarray, np.ndarray]
    r: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]

    def reconstruct(self, q: int):
        x = self.model[0] + self.model[1] + self.model[2]
        r = tuple(sum(col) % q for col in zip(*self.r))
        return x, r


def share_input(x, r, q: int, rng=None) -> InputShares:
    """Fresh seeds; shares 0 and 1 are seed-derived, share 2 balances."""
    x = np.asarray(x, dtype=np.int64)
    seeds = tuple(_rng_bytes(rng, SEED_BYTES) for _ in range(3))
    x0 = model_share_from_seed(seeds[0], x.size)
    x1 = model_share_from_seed(seeds[1], x.size)
    r = tuple(int(v) % q for v in r)
    r0 = r_share_from_seed(seeds[0], len(r), q)
    r1 = r_share_from_seed(seeds[1], len(r), q)
    r2 = tuple((a - b - c) % q for a, b, c in zip(r, r0, r1))
    return InputShares(seeds, (x0, x1, x - x0 - x1), (r0, r1, r2))


def share_chunks(share: np.ndarray, params: PedersenParams, b: int) -> list[int]:
    """Linear chunk map (signed slots allowed), reduced mod q."""
    per = params.chunk_slots(b)
    vals = [int(v) for v in share]
    out = []
    for lo in range(0, len(vals), per):
        acc = 0
        for v in reversed(vals[lo:lo + per]):
            acc = (acc << b) + v
        out.append(acc % params.q)
    return out


def party_commitment(share, r_share, params: PedersenParams, b: int) -> tuple[int, ...]:
    return tuple(commit_one(params, c, ri) for c, ri in zip(share_chunks(share, params, b), r_share))


class _Reader:
    """Sequential reader over a recorded array, or random fill when absent."""

    def __init__(self, data: np.ndarray | None, rng=None):
        self.data = data
        self.rng = rng
        self.pos = 0
        self.overrun = False
        self.log: list[np.ndarray] = []

    def take(self, count: int) -> np.ndarray:
        if self.data is None:
            raw = np.frombuffer(self.rng.randbytes(8 * count), dtype="<u8") if count else np.zeros(0, np.uint64)
            out = F.reduce(raw >> np.uint64(3))
            self.log.append(out)
            return out
        end = self.pos + count
        if end > self.data.size:
            self.overrun = True
            out = np.zeros(count, dtype=np.uint64)
            avail = self.data[self.pos:]
            out[:avail.size] = avail
            self.pos = self.data.size
            return out
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def generated(self) -> np.ndarray:
        return np.concatenate(self.log) if self.log else np.zeros(0, np.uint64)

    def exhausted(self) -> bool:
        return self.data is None or self.pos == self.data.size


def _gate_op(kind):
    if kind == "mul":
        return F.fast_mul
    if kind == "matmul":
        return lambda a, b: np.stack([F.matmul(a[k], b[k]) for k in range(a.shape[0])]) if a.ndim == 3 else F.matmul(a, b)
    return lambda a, b: F.rowdot(a, b)


class _GateRuntime(Runtime):
    phase = 1

    def mul(self, a, b, label=""):
        a, b = np.broadcast_arrays(a, b)
        return self._gate("mul", a, b, label)

    def matmul(self, a, b, label=""):
        return self._gate("matmul", a, b, label)

    def inner(self, a, b, label=""):
        return self._gate("inner", a.reshape(a.shape[0], -1), b.reshape(b.shape[0], -1), label)

    def _local(self, kind, a_i, a_j, b_i, b_j):
        op = _gate_op(kind)
        return F.add(op(a_i, F.add(b_i, b_j)), op(a_j, b_i))


class ProverRuntime(_GateRuntime):
    """All three parties; records each party's gate outputs."""

    parties = (0, 1, 2)

    def __init__(self, shares: InputShares, tamper=None):
        super().__init__()
        self.shares = shares
        self.input_tapes = [F.Tape(shares.seeds[i], b"input") for i in (0, 1)]
        self.gate_tapes = [F.Tape(shares.seeds[i], b"gate") for i in range(3)]
        self.aux: list[np.ndarray] = []
        self.outputs = [[[], [], []], [[], [], []]]
        self.tamper = tamper

    def model_wire(self):
        return np.stack([F.from_int(s) for s in self.shares.model])

    def witness(self, plain_fn, shape):
        v = F.from_int(np.asarray(plain_fn(), dtype=np.int64)).ravel()
        s0 = self.input_tapes[0].take(v.size)
        s1 = self.input_tapes[1].take(v.size)
        s2 = F.sub(F.sub(v, s0), s1)
        self.aux.append(s2)
        return np.stack([s0, s1, s2]).reshape((3,) + tuple(shape))

    def plain(self, a):
        return F.to_signed(F.sum_mod(a, axis=0))

    def _gate(self, kind, a, b, label):
        z = []
        for i in range(3):
            j = (i + 1) % 3
            z.append(self._local(kind, a[i], a[j], b[i], b[j]))
        size = z[0].size
        rand = [self.gate_tapes[i].take(size).reshape(z[0].shape) for i in range(3)]
        z = np.stack([F.sub(F.add(z[i], rand[i]), rand[(i + 1) % 3]) for i in range(3)])
        if self.tamper is not None:
            self.tamper(label, z)
        for i in range(3):
            self.outputs[self.phase - 1][i].append(z[i].ravel().copy())
        return z

    def aux_array(self) -> np.ndarray:
        return np.concatenate(self.aux) if self.aux else np.zeros(0, np.uint64)

    def output_array(self, party: int, phase: int) -> np.ndarray:
        parts = self.outputs[phase - 1][party]
        return np.concatenate(parts) if parts else np.zeros(0, np.uint64)


class VerifierRuntime(_GateRuntime):
    """Views e and e+1: recompute party e, take party e+1 as recorded.

    ``recorded`` holds (phase-1, phase-2) gate outputs per revealed party;
    ``None`` for party e+1 means "simulate" and fills from ``rng``.
    """

    def __init__(self, e: int, seeds, model_shares, aux, recorded, rng=None):
        super().__init__()
        self.parties = (e, (e + 1) % 3)
        self.seeds = seeds
        self.model_shares = model_shares
        self.input = []
        for k, party in enumerate(self.parties):
            if party < 2:
                self.input.append(F.Tape(seeds[k], b"input"))
            else:
                self.input.append(_Reader(aux, rng))
        self.gate_tapes = [F.Tape(s, b"gate") for s in seeds]
        self.recorded = [[_Reader(rec, rng) for rec in pair] for pair in recorded]
        self.computed = [[], []]
        self.consistent = True

    def model_wire(self):
        return np.stack([F.from_int(s) for s in self.model_shares])

    def witness(self, plain_fn, shape):
        size = int(np.prod(shape))
        return np.stack([src.take(size) for src in self.input]).reshape((2,) + tuple(shape))

    def _gate(self, kind, a, b, label):
        z0 = self._local(kind, a[0], a[1], b[0], b[1])
        size = z0.size
        r0 = self.gate_tapes[0].take(size).reshape(z0.shape)
        r1 = self.gate_tapes[1].take(size).reshape(z0.shape)
        z0 = F.sub(F.add(z0, r0), r1)
        rec0 = self.recorded[self.phase - 1][0].take(size)
        if not np.array_equal(rec0, z0.ravel()):
            self.consistent = False
        z1 = self.recorded[self.phase - 1][1].take(size).reshape(z0.shape)
        self.computed[self.phase - 1].append(z0.ravel().copy())
        return np.stack([z0, z1])

    def computed_array(self, phase: int) -> np.ndarray:
        parts = self.computed[phase - 1]
        return np.concatenate(parts) if parts else np.zeros(0, np.uint64)

    def fully_consumed(self) -> bool:
        readers = [r for pair in self.recorded for r in pair] + [s for s in self.input if isinstance(s, _Reader)]
        return all(r.exhausted() and not r.overrun for r in readers)


# --------------------------------------------------------------------------
# per-party digests and the second phase


def _u64(v: int) -> bytes:
    return int(v).to_bytes(8, "big")


def view_digest(party: int, seed: bytes, outputs: np.ndarray, model_share=None, r_share=None, aux=None) -> bytes:
    h = hashlib.sha256(b"zkagg-view-1")
    h.update(bytes([party]))
    h.update(seed)
    if party == 2:
        h.update(_u64(model_share.size))
        h.update(np.ascontiguousarray(model_share, dtype="<i8").tobytes())
        h.update(_u64(len(r_share)))
        for v in r_share:
            h.update(int(v).to_bytes(32, "big"))
        h.update(_u64(aux.size))
        h.update(np.ascontiguousarray(aux, dtype="<u8").tobytes())
    h.update(_u64(outputs.size))
    h.update(np.ascontiguousarray(outputs, dtype="<u8").tobytes())
    return h.digest()


def view_commitment(digest: bytes, outputs2: np.ndarray) -> bytes:
    h = hashlib.sha256(b"zkagg-view-2")
    h.update(digest)
    h.update(np.ascontiguousarray(outputs2, dtype="<u8").tobytes())
    return h.digest()


def phase_two_coefficients(digests, n_res: int, n_bits: int):
    rho = hashlib.sha256(b"zkagg-rho" + b"".join(digests)).digest()
    return F.expand(rho, b"residual", n_res), F.expand(rho, b"boolean", n_bits)


def phase_two(rt: _GateRuntime, digests) -> np.ndarray:
    """Random linear check of all residuals and bits; returns Y per row."""
    res, bits = rt.collected()
    c_res, c_bits = phase_two_coefficients(digests, res.shape[1], bits.shape[1])
    rt.phase = 2
    u = F.fast_mul(bits, c_bits[None, :])
    w = rt.add_const(bits, -1)
    boolean = rt.inner(u, w, "boolean")
    return F.add(F.rowdot(res, c_res[None, :]), boolean)


@dataclass
class PartyRecord:
    """Everything needed to reveal one party of one emulation."""

    party: int
    seed: bytes
    outputs: np.ndarray
    outputs2: np.ndarray
    model_share: np.ndarray | None = None
    r_share: tuple[int, ...] | None = None
    aux: np.ndarray | None = None
    digest: bytes = b""
    commitment: bytes = b""
    y: int = 0
    pc: tuple[int, ...] = field(default_factory=tuple)


@dataclass
class Emulation:
    parties: list[PartyRecord]
    clean: bool  # plaintext verdict seen by the prover
    outcome: tuple[int, ...] | None  # product of party commitments, or None


def emulate_mpc(shares: InputShares, spec: CircuitSpec, tamper=None) -> Emulation:
    """Run the three parties; outcome is the commitment iff sum(Y) = 0."""
    if any(s.size != spec.n_params for s in shares.model) or any(len(r) != spec.n_chunks for r in shares.r):
        raise CircuitError("shares do not match the circuit")
    rt = ProverRuntime(shares, tamper)
    out = evaluate(rt, spec, rt.model_wire())
    clean = int(rt.plain(out.verdict)) == 1
    aux = rt.aux_array()
    digests = []
    for i in range(3):
        extra = (shares.model[2], shares.r[2], aux) if i == 2 else (None, None, None)
        digests.append(view_digest(i, shares.seeds[i], rt.output_array(i, 1), *extra))
    ys = phase_two(rt, digests)
    params, b = spec.pedersen, spec.chunk_bits
    records = []
    for i in range(3):
        out2 = rt.output_array(i, 2)
        rec = PartyRecord(i, shares.seeds[i], rt.output_array(i, 1), out2, digest=digests[i],
                          commitment=view_commitment(digests[i], out2), y=int(ys[i]),
                          pc=party_commitment(shares.model[i], shares.r[i], params, b))
        if i == 2:
            rec.model_share, rec.r_share, rec.aux = shares.model[2], shares.r[2], aux
        records.append(rec)
    total = F.sum_mod(ys, axis=0)
    outcome = None
    if int(total) == 0:
        P = params.P
        outcome = tuple(a * b % P * c % P for a, b, c in zip(*(r.pc for r in records)))
    return Emulation(records, clean, outcome)


def replay(e: int, revealed: tuple[PartyRecord, PartyRecord], hidden_digest: bytes, spec: CircuitSpec, rng=None):
    """Verifier side: recompute party e from views e and e+1.

    Returns (records with recomputed digest/commitment/y/pc, consistent).
    With ``rng`` set, recorded outputs are absent and drawn at random,
    which is how the simulator fabricates the revealed pair.
    """
    first, second = revealed
    parties = (e, (e + 1) % 3)
    if (first.party, second.party) != parties:
        raise CircuitError("revealed views are not an adjacent pair")
    params, b, q = spec.pedersen, spec.chunk_bits, spec.pedersen.q
    m, nc = spec.n_params, spec.n_chunks
    model_shares, r_shares, aux = [], [], None
    for rec in revealed:
        if rec.party < 2:
            model_shares.append(model_share_from_seed(rec.seed, m))
            r_shares.append(r_share_from_seed(rec.seed, nc, q))
        else:
            if rec.model_share is None or rec.model_share.shape != (m,) or rec.r_share is None or len(rec.r_share) != nc:
                raise CircuitError("party 2 view is missing its explicit shares")
            if any(not 0 <= v < q for v in rec.r_share):
                raise CircuitError("randomness share outside Z_q")
            model_shares.append(np.asarray(rec.model_share, dtype=np.int64))
            r_shares.append(tuple(rec.r_share))
            aux = rec.aux
    if 2 in parties:
        # the integer shares of the revealed pair must sum into (-p, range_bound)
        pair = model_shares[0] + model_shares[1]
        if pair.min() <= -F.P or pair.max() >= spec.range_bound:
            raise CircuitError("model shares out of range")
    recorded = [(first.outputs, second.outputs), (first.outputs2, second.outputs2)]
    rt = VerifierRuntime(e, (first.seed, second.seed), model_shares, aux, recorded, rng)
    evaluate(rt, spec, rt.model_wire())
    if rng is not None:
        # simulation: party e is computed, party e+1 and any witness shares are fresh randomness
        outs1 = [rt.computed_array(1), rt.recorded[0][1].generated()]
        if 2 in parties:
            aux = rt.input[parties.index(2)].generated()
    else:
        outs1 = [first.outputs, second.outputs]
    digests = {}
    for k, rec in enumerate(revealed):
        extra = (model_shares[k], r_shares[k], aux) if rec.party == 2 else (None, None, None)
        digests[rec.party] = view_digest(rec.party, rec.seed, outs1[k], *extra)
    digests[(e + 2) % 3] = hidden_digest
    ys = phase_two(rt, [digests[i] for i in range(3)])
    if rng is not None:
        outs2 = [rt.computed_array(2), rt.recorded[1][1].generated()]
    else:
        outs2 = [first.outputs2, second.outputs2]
    results = []
    for k, rec in enumerate(revealed):
        two = rec.party == 2
        results.append(PartyRecord(rec.party, rec.seed, outs1[k], outs2[k], model_shares[k] if two else None,
                                   r_shares[k] if two else None, aux if two else None,
                                   digest=digests[rec.party], commitment=view_commitment(digests[rec.party], outs2[k]),
                                   y=int(ys[k]), pc=party_commitment(model_shares[k], r_shares[k], params, b)))
    consistent = rt.consistent and rt.fully_consumed()
    return results, consistent
