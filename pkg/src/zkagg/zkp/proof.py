"""Non-interactive proofs that a committed model passes the backdoor check.

Each repetition emulates the three parties on fresh shares, commits to
every view with a hash, and opens two adjacent views chosen by a hash of
all repetitions' commitments and outputs.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass

import numpy as np

from .. import _bytes
from ..commitment import CommitmentVector, commitment_from_bytes, commitment_to_bytes
from . import field as F
from .circuit import CircuitError, CircuitSpec, plain_check
from .mpc import (PartyRecord, emulate_mpc, model_share_from_seed, party_commitment, replay, share_input,
                  view_commitment)

_MAGIC = b"ZKPF"
_VERSION = 1
COMMIT_BYTES = 32


class PredicateFailed(Exception):
    """The model does not pass the check, so an honest proof cannot exist."""


@dataclass
class Repetition:
    commitments: tuple[bytes, bytes, bytes]
    ys: tuple[int, int, int]
    pcs: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]
    e: int
    views: tuple[PartyRecord, PartyRecord]
    hidden_digest: bytes
    hidden_outputs2: np.ndarray

    @property
    def pair(self) -> frozenset:
        return frozenset((self.e, (self.e + 1) % 3))


@dataclass
class Proof:
    lam: int
    circuit_digest: bytes
    dataset_digest: bytes
    commitment: CommitmentVector
    reps: list[Repetition]


# --------------------------------------------------------------------------
# challenges


def _oracle(tag: bytes, *parts: bytes) -> int:
    h = hashlib.sha256(b"zkagg-challenge" + tag)
    for p in parts:
        h.update(struct.pack(">I", len(p)))
        h.update(p)
    return int.from_bytes(h.digest(), "big")


def challenge(j: int, commitments) -> int:
    """Challenge index e_j in {0, 1, 2} from the oracle."""
    commitments = [bytes(c) for c in commitments]
    e1 = _oracle(b"\x01", *commitments) % 3
    if j == 1:
        return e1
    if j == 2:
        return (e1 + 1 + _oracle(b"\x02", *commitments) % 2) % 3
    raise ValueError("j must be 1 or 2")


def opened_first(e1: int, e2: int) -> int:
    """The e with {e1, e2} = {e, e+1 mod 3}."""
    return e1 if (e1 + 1) % 3 == e2 else e2


def _transcript_digest(spec_digest: bytes, data_digest: bytes, commitment: CommitmentVector, lam: int, reps) -> bytes:
    h = hashlib.sha256(b"zkagg-transcript")
    h.update(spec_digest + data_digest + struct.pack(">I", lam))
    h.update(commitment_to_bytes(commitment))
    width = (commitment.P.bit_length() + 7) // 8
    for commitments, ys, pcs in reps:
        for c in commitments:
            h.update(c)
        for y in ys:
            h.update(int(y).to_bytes(8, "big"))
        for pc in pcs:
            h.update(b"".join(int(v).to_bytes(width, "big") for v in pc))
    return h.digest()


def _rep_challenges(transcript: bytes, k: int) -> tuple[int, int]:
    key = (transcript, k.to_bytes(4, "big"))
    return challenge(1, key), challenge(2, key)


# --------------------------------------------------------------------------
# prover


def _commitment_vector(spec: CircuitSpec, x, r) -> CommitmentVector:
    x = np.asarray(x, dtype=np.int64)
    return CommitmentVector(party_commitment(x, r, spec.pedersen, spec.chunk_bits), spec.chunk_bits, spec.pedersen.P)


def _check_statement(spec: CircuitSpec, x, r):
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (spec.n_params,):
        raise CircuitError("model vector has the wrong length")
    if x.min() < 0 or x.max() >= spec.range_bound:
        raise CircuitError("model value outside [0, range_bound)")
    if len(r) != spec.n_chunks:
        raise CircuitError("commitment randomness has the wrong length")
    return x


def _assemble(spec, x, r, lam, emulations) -> Proof:
    commitment = _commitment_vector(spec, x, r)
    rows = [(tuple(p.commitment for p in em.parties), tuple(p.y for p in em.parties), tuple(p.pc for p in em.parties))
            for em in emulations]
    transcript = _transcript_digest(spec.digest(), spec.dataset_digest(), commitment, lam, rows)
    reps = []
    for k, em in enumerate(emulations):
        e = opened_first(*_rep_challenges(transcript, k))
        p = em.parties
        reps.append(Repetition(rows[k][0], rows[k][1], rows[k][2], e, (p[e], p[(e + 1) % 3]),
                               p[(e + 2) % 3].digest, p[(e + 2) % 3].outputs2))
    return Proof(lam, spec.digest(), spec.dataset_digest(), commitment, reps)


def prove(x, r, spec: CircuitSpec, lam: int, rng=None) -> Proof:
    """Honest prover; raises PredicateFailed when the model is flagged."""
    if lam < 1:
        raise ValueError("need at least one repetition")
    x = _check_statement(spec, x, r)
    if not plain_check(spec, x)["clean"]:
        raise PredicateFailed("model is flagged as backdoored")
    ems = []
    for _ in range(lam):
        em = emulate_mpc(share_input(x, r, spec.pedersen.q, rng), spec)
        if em.outcome is None:  # pragma: no cover - would mean a circuit bug
            raise PredicateFailed("emulation did not produce the commitment")
        ems.append(em)
    return _assemble(spec, x, r, lam, ems)


def prove_cheating(x, r, spec: CircuitSpec, lam: int, rng, party: int | None = None) -> Proof:
    """Forge a proof for a flagged model.

    In every repetition one party's output of the final pruned-accuracy
    product gate is shifted so that the pruned count equals the base
    count. All other values, including later witness bits, are derived
    honestly from the tampered wires, so only that party's view is
    inconsistent.
    """
    x = _check_statement(spec, x, r)
    info = plain_check(spec, x)
    delta = info["base_correct"] - info["pruned_correct"]
    ems = []
    for _ in range(lam):
        target = party if party is not None else rng.randrange(3)

        def tamper(label, z, _t=target):
            if label == "b_correct:last":
                flat = z[_t].reshape(-1)
                flat[0] = F.add(flat[0:1], F.from_int(np.array([delta])))[0]
                z[_t] = flat.reshape(z[_t].shape)

        ems.append(emulate_mpc(share_input(x, r, spec.pedersen.q, rng), spec, tamper=tamper))
    return _assemble(spec, x, r, lam, ems)


# --------------------------------------------------------------------------
# verifier


def verify(proof: Proof, commitment: CommitmentVector, spec: CircuitSpec, lam: int | None = None) -> bool:
    """Accept iff every repetition passes; stops at the first failure."""
    lam = proof.lam if lam is None else lam
    if lam < 1 or proof.lam != lam or len(proof.reps) != lam:
        return False
    if proof.circuit_digest != spec.digest() or proof.dataset_digest != spec.dataset_digest():
        return False
    if proof.commitment.elements != commitment.elements or len(commitment) != spec.n_chunks:
        return False
    P = spec.pedersen.P
    rows = [(rep.commitments, rep.ys, rep.pcs) for rep in proof.reps]
    transcript = _transcript_digest(proof.circuit_digest, proof.dataset_digest, commitment, lam, rows)
    for k, rep in enumerate(proof.reps):
        e = rep.e
        hidden = (e + 2) % 3
        try:
            recomputed, consistent = replay(e, rep.views, rep.hidden_digest, spec)
        except (CircuitError, ValueError):
            return False
        # commitments of the opened views and of the hidden one
        if any(rec.commitment != rep.commitments[rec.party] for rec in recomputed):
            return False
        if view_commitment(rep.hidden_digest, rep.hidden_outputs2) != rep.commitments[hidden]:
            return False
        # challenges
        if opened_first(*_rep_challenges(transcript, k)) != e:
            return False
        # outputs
        for rec in recomputed:
            if rec.y != rep.ys[rec.party] or rec.pc != tuple(rep.pcs[rec.party]):
                return False
        if (sum(rep.ys) % F.P) != 0:
            return False
        prod = tuple(a * b % P * c % P for a, b, c in zip(*rep.pcs))
        if len(prod) != len(commitment) or prod != commitment.elements:
            return False
        # pairwise consistency of the recomputed party with its record
        if not consistent:
            return False
    return True


# --------------------------------------------------------------------------
# simulator (used to test that revealed views carry no information)


def simulate_repetition(spec: CircuitSpec, commitment: CommitmentVector, e: int, rng) -> Repetition:
    """Fabricate one repetition for the pair (e, e+1) without the model."""
    q, P = spec.pedersen.q, spec.pedersen.P
    seeds = [rng.randbytes(32), rng.randbytes(32)]
    parties = (e, (e + 1) % 3)
    views = []
    for k, party in enumerate(parties):
        rec = PartyRecord(party, seeds[k], None, None)
        if party == 2:
            partner = (e + 1) % 3 if e == 2 else e
            other = model_share_from_seed(seeds[parties.index(partner)], spec.n_params)
            # matches the honest law x2 = x - x0 - x1 up to a statistically small shift
            u = np.array([rng.randrange(F.P) for _ in range(spec.n_params)], dtype=np.int64)
            rec.model_share = -other - u + spec.range_bound // 2
            rec.r_share = tuple(rng.randrange(q) for _ in range(spec.n_chunks))
        views.append(rec)
    hidden_digest = rng.randbytes(32)
    recs, _ = replay(e, tuple(views), hidden_digest, spec, rng=rng)
    ys = [0, 0, 0]
    pcs = [(), (), ()]
    commits = [b"", b"", b""]
    for rec in recs:
        ys[rec.party] = rec.y
        pcs[rec.party] = rec.pc
        commits[rec.party] = rec.commitment
    hidden = (e + 2) % 3
    ys[hidden] = (-sum(ys)) % F.P
    known = [pcs[p] for p in parties]
    pcs[hidden] = tuple(c * pow(a * b % P, -1, P) % P for c, a, b in zip(commitment.elements, *known))
    hidden_out2 = F.expand(rng.randbytes(32), b"sim", 1)
    commits[hidden] = view_commitment(hidden_digest, hidden_out2)
    return Repetition(tuple(commits), tuple(ys), tuple(pcs), e, tuple(recs), hidden_digest, hidden_out2)


# --------------------------------------------------------------------------
# serialization


def _write_array(buf, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    buf.write(struct.pack(">I", arr.size))
    buf.write(arr.tobytes())


def _read_array(buf, dtype):
    n = _bytes.read_u32(buf)
    raw = _bytes.read_exact(buf, n * 8)
    return np.frombuffer(raw, dtype=dtype).copy()


def _write_view(buf, rec: PartyRecord):
    buf.write(bytes([rec.party]))
    buf.write(rec.seed)
    _write_array(buf, rec.outputs, "<u8")
    _write_array(buf, rec.outputs2, "<u8")
    if rec.party == 2:
        _write_array(buf, rec.model_share, "<i8")
        buf.write(struct.pack(">I", len(rec.r_share)))
        for v in rec.r_share:
            buf.write(int(v).to_bytes(32, "big"))
        _write_array(buf, rec.aux, "<u8")


def _read_view(buf) -> PartyRecord:
    party = _bytes.read_u8(buf)
    if party > 2:
        raise _bytes.FormatError("bad party index")
    seed = _bytes.read_exact(buf, 32)
    outputs = _read_array(buf, "<u8")
    outputs2 = _read_array(buf, "<u8")
    rec = PartyRecord(party, seed, outputs, outputs2)
    if party == 2:
        rec.model_share = _read_array(buf, "<i8")
        n = _bytes.read_u32(buf)
        rec.r_share = tuple(int.from_bytes(_bytes.read_exact(buf, 32), "big") for _ in range(n))
        rec.aux = _read_array(buf, "<u8")
    return rec


def proof_to_bytes(proof: Proof) -> bytes:
    buf = io.BytesIO()
    buf.write(_MAGIC + bytes([_VERSION]))
    buf.write(struct.pack(">I", proof.lam))
    buf.write(proof.circuit_digest + proof.dataset_digest)
    cbytes = commitment_to_bytes(proof.commitment)
    buf.write(struct.pack(">I", len(cbytes)) + cbytes)
    width = (proof.commitment.P.bit_length() + 7) // 8
    for rep in proof.reps:
        buf.write(bytes([rep.e]))
        for c in rep.commitments:
            buf.write(c)
        for y in rep.ys:
            buf.write(int(y).to_bytes(8, "big"))
        for pc in rep.pcs:
            buf.write(struct.pack(">I", len(pc)))
            buf.write(b"".join(int(v).to_bytes(width, "big") for v in pc))
        for rec in rep.views:
            blob = io.BytesIO()
            _write_view(blob, rec)
            data = blob.getvalue()
            buf.write(struct.pack(">I", len(data)) + data)
        buf.write(rep.hidden_digest)
        _write_array(buf, rep.hidden_outputs2, "<u8")
    return buf.getvalue()


def proof_from_bytes(data: bytes, spec: CircuitSpec) -> Proof:
    buf = io.BytesIO(data)
    _bytes.expect_magic(buf, _MAGIC, _VERSION)
    lam = _bytes.read_u32(buf)
    cd = _bytes.read_exact(buf, 32)
    dd = _bytes.read_exact(buf, 32)
    clen = _bytes.read_u32(buf)
    commitment = commitment_from_bytes(_bytes.read_exact(buf, clen), spec.pedersen, spec.chunk_bits)
    width = spec.pedersen.element_bytes
    reps = []
    for _ in range(lam):
        e = _bytes.read_u8(buf)
        if e > 2:
            raise _bytes.FormatError("bad challenge index")
        commits = tuple(_bytes.read_exact(buf, COMMIT_BYTES) for _ in range(3))
        ys = tuple(_bytes.read_u64(buf) for _ in range(3))
        pcs = []
        for _ in range(3):
            n = _bytes.read_u32(buf)
            pcs.append(tuple(int.from_bytes(_bytes.read_exact(buf, width), "big") for _ in range(n)))
        views = []
        for _ in range(2):
            n = _bytes.read_u32(buf)
            vb = io.BytesIO(_bytes.read_exact(buf, n))
            views.append(_read_view(vb))
            _bytes.expect_end(vb)
        hidden = _bytes.read_exact(buf, COMMIT_BYTES)
        hidden_out2 = _read_array(buf, "<u8")
        reps.append(Repetition(commits, ys, tuple(pcs), e, tuple(views), hidden, hidden_out2))
    _bytes.expect_end(buf)
    return Proof(lam, cd, dd, commitment, reps)
