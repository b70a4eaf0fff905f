"""The backdoor-check predicate as an arithmetic circuit over F_p.

The circuit is written once against a small runtime interface. Each wire
is a ``uint64`` array whose leading axis holds one row per emulated party
(three for the prover, two for the verifier, one for plain evaluation).
Linear operations act row-wise; multiplications are gates whose
semantics depend on the runtime.

Comparisons use prover-supplied bit decompositions: for a signed value v
and width K the prover inputs the K bits of ``v + 2^(K-1)``. Their
recomposition minus the offset must equal v (a residual that has to be
zero) and every bit must be 0 or 1 (checked in one batched gate at the
end). The top bit is then 1 exactly when v >= 0.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from .. import model as mdl
from ..commitment import PedersenParams, params_to_bytes
from . import field as F


class CircuitError(ValueError):
    """Inputs do not fit the circuit (shape or range)."""


@dataclass(frozen=True, eq=False)
class CircuitSpec:
    dims: tuple[int, ...]
    dataset: mdl.Dataset = field(repr=False)
    defense: mdl.DefenseParams
    pedersen: PedersenParams = field(repr=False)
    chunk_bits: int
    frac_bits: int = mdl.FRAC_BITS
    range_bound: int = mdl.RANGE_BOUND

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        if self.dataset.dim != self.dims[0]:
            raise CircuitError("dataset dimension does not match the model input")
        if self.dataset.labels.size and self.dataset.labels.max() >= self.dims[-1]:
            raise CircuitError("labels exceed the number of classes")
        if len(self.dataset) == 0:
            raise CircuitError("empty validation set")
        if self.pedersen.chunk_slots(self.chunk_bits) < 1:
            raise CircuitError("chunk_bits too wide for the commitment group")
        if self.range_bound > 1 << self.chunk_bits:
            raise CircuitError("model values do not fit a commitment slot")

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.dims[:-1], self.dims[1:]))

    @property
    def n_chunks(self) -> int:
        return -(-self.n_params // self.pedersen.chunk_slots(self.chunk_bits))

    def digest(self) -> bytes:
        tau = self.defense.tau
        h = hashlib.sha256(b"zkagg-circuit-v1")
        for v in (*self.dims, self.frac_bits, self.range_bound, self.chunk_bits, tau.numerator, tau.denominator):
            h.update(int(v).to_bytes(8, "big", signed=True))
        h.update(params_to_bytes(self.pedersen))
        return h.digest()

    def dataset_digest(self) -> bytes:
        return self.dataset.digest()

    def widths(self) -> dict:
        return bit_widths(self)


def bit_widths(spec: CircuitSpec) -> dict:
    """Signed comparison widths from worst-case magnitudes."""
    f = spec.frac_bits
    wmax = spec.range_bound // 2
    L = len(spec.dataset)
    feat = int(np.abs(spec.dataset.samples).max()) if spec.dataset.samples.size else 0
    n_layers = len(spec.dims) - 1
    pre = []
    prev = feat
    for l in range(n_layers):
        bound = spec.dims[l] * wmax * prev + wmax * (1 << (f * (l + 1)))
        pre.append(bound)
        prev = bound
    hidden = pre[:-1]
    top = len(hidden)
    sums = [L * hidden[l] << (f * (top - 1 - l)) for l in range(top)]
    tau = spec.defense.tau
    verdict = tau.numerator * L + L * tau.denominator
    return {
        "pre": [b.bit_length() + 1 for b in pre[:-1]],
        "diff": (2 * pre[-1] + 1).bit_length() + 1,
        "argmin": (max(sums) if sums else 1).bit_length() + 1,
        "verdict": verdict.bit_length() + 1,
        "model": (spec.range_bound - 1).bit_length(),
    }


# --------------------------------------------------------------------------
# runtime base


class Runtime:
    """Row-wise linear algebra; subclasses supply gates and witnesses.

    ``parties`` lists which party each row belongs to; public constants are
    added to party 0's row only.
    """

    parties: tuple[int, ...] = (0,)

    def __init__(self):
        self.bit_wires: list[np.ndarray] = []
        self.residuals: list[np.ndarray] = []

    # linear ------------------------------------------------------------
    @property
    def rows(self) -> int:
        return len(self.parties)

    def const_row(self) -> int | None:
        return self.parties.index(0) if 0 in self.parties else None

    def add(self, a, b):
        return F.add(a, b)

    def sub(self, a, b):
        return F.sub(a, b)

    def neg(self, a):
        return F.neg(a)

    def scale(self, a, c):
        """Multiply by a public (signed) integer scalar or broadcastable array."""
        return F.fast_mul(a, F.from_int(c))

    def add_const(self, a, c):
        c = F.from_int(np.broadcast_to(np.asarray(c, dtype=object if _is_big(c) else np.int64), a.shape[1:]))
        out = a.copy()
        row = self.const_row()
        if row is not None:
            out[row] = F.add(out[row], c)
        return out

    def sum(self, a, axis):
        """Sum over a non-row axis (axis counted without the row axis)."""
        return F.sum_mod(a, axis=axis + 1 if axis >= 0 else axis)

    def public_matmul(self, pub, a):
        """pub (n, k) @ a[row] (k, m) for each row."""
        pf = F.from_int(pub)
        return np.stack([F.matmul(pf, a[r]) for r in range(a.shape[0])])

    # gates / witnesses --------------------------------------------------
    def mul(self, a, b, label: str = ""):
        raise NotImplementedError

    def matmul(self, a, b, label: str = ""):
        """Per row: a (n, k) @ b (k, m), as a multiplication gate."""
        raise NotImplementedError

    def inner(self, a, b, label: str = ""):
        """Per row: sum_k a_k b_k over flat vectors, as one gate."""
        raise NotImplementedError

    def witness(self, plain_fn, shape) -> np.ndarray:
        raise NotImplementedError

    def plain(self, a) -> np.ndarray | None:
        """Signed plaintext of a wire when this runtime can see it."""
        return None

    # comparison gadget --------------------------------------------------
    def bits(self, v, width: int, signed: bool = True):
        """Return the bit wires of v (+ 2^(width-1) when signed); last axis = bits."""
        off = 1 << (width - 1) if signed else 0
        shape = v.shape[1:] + (width,)

        def plain_bits():
            pv = self.plain(v)
            shifted = pv + off
            if shifted.size and (shifted.min() < 0 or shifted.max() >= 1 << width):
                raise CircuitError(f"value outside the {width}-bit comparison range")
            return (shifted[..., None] >> np.arange(width, dtype=np.int64)) & 1

        b = self.witness(plain_bits, shape)
        pows = F.from_int(np.array([1 << i for i in range(width)], dtype=object))
        recomposed = F.sum_mod(F.fast_mul(b, pows), axis=-1)
        self.residuals.append(self.sub(self.add_const(recomposed, -off), v).reshape(self.rows, -1))
        self.bit_wires.append(b.reshape(self.rows, -1))
        return b

    def nonneg(self, v, width: int):
        """1 where v >= 0, else 0."""
        return self.bits(v, width, signed=True)[..., -1]

    def require_one(self, bit):
        self.residuals.append(self.sub(self.add_const(np.zeros_like(bit), 1), bit).reshape(self.rows, -1))

    def collected(self):
        res = np.concatenate(self.residuals, axis=1) if self.residuals else np.zeros((self.rows, 0), np.uint64)
        bits = np.concatenate(self.bit_wires, axis=1) if self.bit_wires else np.zeros((self.rows, 0), np.uint64)
        return res, bits


def _is_big(c) -> bool:
    return isinstance(c, int) and not -(1 << 62) < c < 1 << 62


class PlainRuntime(Runtime):
    """One row holding actual values; gates are plain products."""

    parties = (0,)

    def mul(self, a, b, label=""):
        return F.fast_mul(a, b)

    def matmul(self, a, b, label=""):
        return np.stack([F.matmul(a[r], b[r]) for r in range(a.shape[0])])

    def inner(self, a, b, label=""):
        return F.rowdot(a.reshape(a.shape[0], -1), b.reshape(b.shape[0], -1))

    def witness(self, plain_fn, shape):
        return F.from_int(plain_fn())[None].reshape((1,) + shape)

    def plain(self, a):
        return F.to_signed(a[0])


# --------------------------------------------------------------------------
# the predicate


@dataclass
class CircuitOutputs:
    verdict: np.ndarray  # 1 = clean
    base_correct: np.ndarray
    pruned_correct: np.ndarray
    onehot: np.ndarray


def _layer_slices(dims):
    out, pos = [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        out.append(((pos, pos + a * b), (pos + a * b, pos + a * b + b)))
        pos += a * b + b
    return out


def _correctness(rt: Runtime, logits, labels, n_classes, width, label):
    """1 where the true label wins (strictly against lower indices)."""
    L = labels.size
    others = np.array([[j for j in range(n_classes) if j != y] for y in labels], dtype=np.int64).reshape(L, n_classes - 1)
    rows = np.arange(L)[:, None]
    true = logits[:, np.arange(L), labels][:, :, None]
    diff = rt.sub(np.broadcast_to(true, (rt.rows, L, n_classes - 1)).copy(), logits[:, rows, others])
    diff = rt.add_const(diff, -(others < labels[:, None]).astype(np.int64))
    ok = rt.nonneg(diff, width)
    return _product(rt, ok, label)


def _product(rt: Runtime, w, label):
    """Product over the last axis with a balanced tree of gates."""
    while w.shape[-1] > 1:
        n = w.shape[-1]
        half = n // 2
        prod = rt.mul(w[..., 0:2 * half:2], w[..., 1:2 * half:2], label + ":last" if n == 2 else label)
        w = np.concatenate([prod, w[..., 2 * half:]], axis=-1) if n % 2 else prod
    return w[..., 0]


def _forward(rt, weights, biases, first_pre, hidden_first, masks, spec, widths, tag):
    """Layers after the first hidden one; optional masks per hidden layer."""
    f = spec.frac_bits
    n_layers = len(weights)
    h = hidden_first if masks is None else rt.mul(hidden_first, np.broadcast_to(masks[0][:, None, :], hidden_first.shape).copy(), tag + "mask0")
    hidden = [h]
    for l in range(1, n_layers):
        wt = np.swapaxes(weights[l], -1, -2)
        z = rt.matmul(h, np.ascontiguousarray(wt), tag + f"layer{l}")
        z = rt.add(z, rt.scale(biases[l], 1 << (f * (l + 1)))[:, None, :])
        if l == n_layers - 1:
            return z, hidden
        s = rt.nonneg(z, widths["pre"][l])
        h = rt.mul(z, s, tag + f"relu{l}")
        if masks is not None:
            h = rt.mul(h, np.broadcast_to(masks[l][:, None, :], h.shape).copy(), tag + f"mask{l}")
        hidden.append(h)
    return first_pre, hidden


def evaluate(rt: Runtime, spec: CircuitSpec, x_wire) -> CircuitOutputs:
    """Run the backdoor check on the shared model vector ``x_wire``."""
    dims = spec.dims
    f = spec.frac_bits
    widths = bit_widths(spec)
    ds = spec.dataset
    L = len(ds)
    if x_wire.shape[1:] != (spec.n_params,):
        raise CircuitError("model vector has the wrong length")

    rt.bits(x_wire, widths["model"], signed=False)
    w_all = rt.add_const(x_wire, -(spec.range_bound // 2))
    weights, biases = [], []
    for (ws, we), (bs, be) in _layer_slices(dims):
        i = len(weights)
        weights.append(w_all[:, ws:we].reshape(rt.rows, dims[i + 1], dims[i]))
        biases.append(w_all[:, bs:be])

    # first layer: public inputs, so it is linear
    z1 = rt.public_matmul(ds.samples, np.ascontiguousarray(np.swapaxes(weights[0], -1, -2)))
    z1 = rt.add(z1, rt.scale(biases[0], 1 << f)[:, None, :])
    s1 = rt.nonneg(z1, widths["pre"][0])
    h1 = rt.mul(z1, s1, "relu0")

    logits, hidden = _forward(rt, weights, biases, z1, h1, None, spec, widths, "a_")
    correct = _correctness(rt, logits, ds.labels, dims[-1], widths["diff"], "a_correct")
    base = rt.sum(correct, 0)

    # activation sums at a common scale, then argmin by pairwise comparison
    top = len(hidden)
    sums = np.concatenate([rt.scale(rt.sum(h, 0), 1 << (f * (top - 1 - l))) for l, h in enumerate(hidden)], axis=1)
    n = sums.shape[1]
    pairs = list(combinations(range(n), 2))
    pi = np.array([i for i, _ in pairs]), np.array([j for _, j in pairs])
    le = rt.nonneg(rt.sub(sums[:, pi[1]], sums[:, pi[0]]), widths["argmin"])  # S_i <= S_j
    index = {p: k for k, p in enumerate(pairs)}
    sel = np.zeros((n, n - 1), dtype=np.int64)
    flip = np.zeros((n, n - 1), dtype=np.int64)
    for k in range(n):
        for c, j in enumerate(jj for jj in range(n) if jj != k):
            if j > k:
                sel[k, c] = index[(k, j)]
            else:
                sel[k, c] = index[(j, k)]
                flip[k, c] = 1
    factors = rt.add_const(rt.scale(le[:, sel], 1 - 2 * flip), flip)
    onehot = _product(rt, factors, "argmin")

    keep = rt.add_const(rt.neg(onehot), 1)
    masks, pos = [], 0
    for d in dims[1:-1]:
        masks.append(keep[:, pos:pos + d])
        pos += d
    logits_p, _ = _forward(rt, weights, biases, z1, h1, masks, spec, widths, "b_")
    correct_p = _correctness(rt, logits_p, ds.labels, dims[-1], widths["diff"], "b_correct")
    pruned = rt.sum(correct_p, 0)

    tau = spec.defense.tau
    slack = rt.add_const(rt.scale(rt.sub(base, pruned), -tau.denominator), tau.numerator * L)
    verdict = rt.nonneg(slack[:, None], widths["verdict"])[:, 0]
    rt.require_one(verdict[:, None])
    return CircuitOutputs(verdict, base, pruned, onehot)


def plain_check(spec: CircuitSpec, x) -> dict:
    """Evaluate the circuit on plaintext; also reports residual health."""
    rt = PlainRuntime()
    x = np.asarray(x, dtype=np.int64)
    out = evaluate(rt, spec, F.from_int(x)[None])
    res, bits = rt.collected()
    return {
        "clean": int(F.to_signed(out.verdict)[0]) == 1,
        "base_correct": int(F.to_signed(out.base_correct)[0]),
        "pruned_correct": int(F.to_signed(out.pruned_correct)[0]),
        "pruned_neuron": int(np.argmax(F.to_signed(out.onehot[0]))),
        "residuals_zero": bool(res.size == 0 or not res.any() or _only_verdict_nonzero(res)),
        "bits_boolean": bool(((bits == 0) | (bits == 1)).all()),
        "n_bits": bits.shape[1],
        "n_residuals": res.shape[1],
    }


def _only_verdict_nonzero(res) -> bool:
    return not res[0, :-1].any()
