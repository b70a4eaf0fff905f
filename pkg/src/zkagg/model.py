"""Integer-only multilayer perceptron and the pruning-based backdoor check.

Weights and inputs are fixed point with ``f`` fraction bits and are never
rescaled between layers: with ``f = 8`` the first pre-activation is at
scale 2^16, the second at 2^24 and the logits at 2^32. Biases are stored at
scale 2^f like the weights and shifted up to the scale of the layer they
feed. Everything stays well inside int64 for the default sizes, and the
arithmetic matches the proof circuit exactly.

Hidden neurons are numbered globally, first layer first.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _bytes

FRAC_BITS = 8
RANGE_BOUND = 1 << 10
DEFAULT_DIMS = (16, 16, 8, 4)
DEFAULT_TAU = Fraction(1, 20)


@dataclass(frozen=True, eq=False)
class QuantizedMLP:
    """Signed fixed-point weights ``W[l]`` (out x in) and biases ``b[l]``."""

    dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    frac_bits: int = FRAC_BITS
    range_bound: int = RANGE_BOUND

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError("need at least an input and an output layer")
        ws = tuple(np.array(w, dtype=np.int64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.int64) for b in self.biases)
        if len(ws) != len(dims) - 1 or len(bs) != len(ws):
            raise ValueError("layer count does not match dims")
        lo, hi = -self.offset, self.range_bound - self.offset
        for l, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise ValueError(f"layer {l} has shape {w.shape}/{b.shape}")
            if w.size and (w.min() < lo or w.max() >= hi) or b.size and (b.min() < lo or b.max() >= hi):
                raise ValueError(f"layer {l} parameter outside [{lo}, {hi})")
            w.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def offset(self) -> int:
        return self.range_bound // 2

    @property
    def n_hidden(self) -> int:
        return sum(self.dims[1:-1])

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.dims[:-1], self.dims[1:]))

    def hidden_slices(self) -> list[tuple[int, int]]:
        out, start = [], 0
        for d in self.dims[1:-1]:
            out.append((start, start + d))
            start += d
        return out

    def locate(self, neuron_id: int) -> tuple[int, int]:
        """Global hidden index -> (layer, unit)."""
        if not 0 <= neuron_id < self.n_hidden:
            raise IndexError(f"no hidden neuron {neuron_id}")
        for layer, (lo, hi) in enumerate(self.hidden_slices()):
            if neuron_id < hi:
                return layer, neuron_id - lo
        raise AssertionError

    def __eq__(self, other):
        if not isinstance(other, QuantizedMLP):
            return NotImplemented
        return (self.dims == other.dims and self.frac_bits == other.frac_bits
                and self.range_bound == other.range_bound
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))

    def __hash__(self):
        return hash(model_to_bytes(self))


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.int64)
        y = np.array(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError("samples must be L x dim and labels length L")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def digest(self) -> bytes:
        return hashlib.sha256(dataset_to_bytes(self)).digest()


@dataclass(frozen=True)
class ActivationStats:
    """Per-neuron activation sums at the common scale 2^(3f)."""

    sums: tuple[int, ...]
    count: int

    @property
    def averages(self) -> tuple[int, ...]:
        return tuple(s // self.count for s in self.sums)


@dataclass(frozen=True)
class DefenseParams:
    tau: Fraction = DEFAULT_TAU
    baseline_accuracy: Fraction | None = None

    def __post_init__(self):
        tau = Fraction(self.tau)
        # tau = 1 is admitted as the degenerate "never flag" setting
        if not 0 < tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        object.__setattr__(self, "tau", tau)


@dataclass(frozen=True)
class BackdoorReport:
    backdoored: bool
    pruned_neuron: int
    base_correct: int
    pruned_correct: int
    size: int
    stats: ActivationStats = field(repr=False)

    @property
    def verdict(self) -> str:
        return "backdoored" if self.backdoored else "clean"

    @property
    def drop(self) -> Fraction:
        return Fraction(self.base_correct - self.pruned_correct, self.size)


# --------------------------------------------------------------------------
# inference


def forward(model: QuantizedMLP, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass; returns logits and post-rectifier activations."""
    x = np.asarray(x, dtype=np.int64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.dims[0]:
        raise ValueError(f"sample dimension {x.shape[1]} != {model.dims[0]}")
    f = model.frac_bits
    h = x
    hidden = []
    n_layers = len(model.weights)
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + (b << (f * (l + 1)))
        if l < n_layers - 1:
            h = np.maximum(z, 0)
            hidden.append(h)
        else:
            h = z
    if single:
        return h[0], [a[0] for a in hidden]
    return h, hidden


def infer(model: QuantizedMLP, sample) -> tuple[int, list[np.ndarray]]:
    """Label (argmax, lowest index on ties) and hidden activations."""
    logits, hidden = forward(model, sample)
    return int(np.argmax(logits)), hidden


def predict(model: QuantizedMLP, samples) -> np.ndarray:
    logits, _ = forward(model, samples)
    return np.argmax(logits, axis=1)


def _check_nonempty(dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise ValueError("empty dataset")


def correct_count(model: QuantizedMLP, dataset: Dataset) -> int:
    _check_nonempty(dataset)
    return int((predict(model, dataset.samples) == dataset.labels).sum())


def accuracy(model: QuantizedMLP, dataset: Dataset) -> Fraction:
    return Fraction(correct_count(model, dataset), len(dataset))


def record_activations(model: QuantizedMLP, dataset: Dataset) -> ActivationStats:
    _check_nonempty(dataset)
    _, hidden = forward(model, dataset.samples)
    f = model.frac_bits
    top = len(hidden)
    sums = []
    for l, h in enumerate(hidden):
        # hidden layer l sits at scale 2^(f(l+2)); lift to the deepest one
        sums.extend(int(v) << (f * (top - 1 - l)) for v in h.sum(axis=0))
    return ActivationStats(tuple(sums), len(dataset))


def min_activation_neuron(stats: ActivationStats) -> int:
    """Exact argmin of the sums; equal sums go to the lowest index."""
    return min(range(len(stats.sums)), key=lambda j: (stats.sums[j], j))


def prune(model: QuantizedMLP, neuron_id: int) -> QuantizedMLP:
    layer, unit = model.locate(neuron_id)
    ws = [w.copy() for w in model.weights]
    bs = [b.copy() for b in model.biases]
    ws[layer][unit, :] = 0
    bs[layer][unit] = 0
    ws[layer + 1][:, unit] = 0
    return QuantizedMLP(model.dims, ws, bs, model.frac_bits, model.range_bound)


def pruned_mask(model: QuantizedMLP, neuron_id: int) -> list[np.ndarray]:
    """0/1 masks per hidden layer with the pruned unit cleared."""
    masks = [np.ones(d, dtype=np.int64) for d in model.dims[1:-1]]
    layer, unit = model.locate(neuron_id)
    masks[layer][unit] = 0
    return masks


def verdict_from_counts(base_correct: int, pruned_correct: int, size: int, tau: Fraction) -> bool:
    """True (backdoored) iff the accuracy drop exceeds tau."""
    tau = Fraction(tau)
    return (base_correct - pruned_correct) * tau.denominator > tau.numerator * size


def backdoor_check(model: QuantizedMLP, dataset: Dataset, params: DefenseParams | None = None) -> BackdoorReport:
    """Prune the least active neuron once and compare accuracies."""
    params = params or DefenseParams()
    stats = record_activations(model, dataset)
    k = min_activation_neuron(stats)
    base = correct_count(model, dataset)
    pruned = correct_count(prune(model, k), dataset)
    return BackdoorReport(verdict_from_counts(base, pruned, len(dataset), params.tau), k, base, pruned, len(dataset), stats)


def pruning_trace(model: QuantizedMLP, dataset: Dataset, steps: int | None = None) -> list[tuple[int, Fraction]]:
    """Repeatedly prune the least active remaining neuron.

    Returns (neuron, accuracy after pruning it) per step. Already pruned
    neurons are skipped even though their activation is zero.
    """
    steps = model.n_hidden if steps is None else steps
    removed: set[int] = set()
    cur = model
    out = []
    for _ in range(steps):
        stats = record_activations(cur, dataset)
        live = [j for j in range(len(stats.sums)) if j not in removed]
        if not live:
            break
        k = min(live, key=lambda j: (stats.sums[j], j))
        cur = prune(cur, k)
        removed.add(k)
        out.append((k, accuracy(cur, dataset)))
    return out


# --------------------------------------------------------------------------
# flatten / inflate


def flatten(model: QuantizedMLP) -> np.ndarray:
    """Offset-encoded parameter vector: per layer, W row-major then b."""
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts) + model.offset


def inflate(x, dims, frac_bits: int = FRAC_BITS, range_bound: int = RANGE_BOUND) -> QuantizedMLP:
    x = np.asarray(x, dtype=np.int64)
    dims = tuple(dims)
    need = sum((a + 1) * b for a, b in zip(dims[:-1], dims[1:]))
    if x.shape != (need,):
        raise ValueError(f"expected {need} parameters, got {x.shape}")
    if x.size and (x.min() < 0 or x.max() >= range_bound):
        raise ValueError("parameter outside [0, range_bound)")
    v = x - range_bound // 2
    ws, bs, pos = [], [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        ws.append(v[pos:pos + a * b].reshape(b, a))
        pos += a * b
        bs.append(v[pos:pos + b])
        pos += b
    return QuantizedMLP(dims, ws, bs, frac_bits, range_bound)


def zero_model(dims=DEFAULT_DIMS) -> QuantizedMLP:
    dims = tuple(dims)
    return QuantizedMLP(dims, [np.zeros((b, a), np.int64) for a, b in zip(dims[:-1], dims[1:])],
                        [np.zeros(b, np.int64) for b in dims[1:]])


def random_model(rng: np.random.Generator, dims=DEFAULT_DIMS, range_bound: int = RANGE_BOUND) -> QuantizedMLP:
    dims = tuple(dims)
    x = rng.integers(0, range_bound, size=sum((a + 1) * b for a, b in zip(dims[:-1], dims[1:])))
    return inflate(x, dims, range_bound=range_bound)


# --------------------------------------------------------------------------
# file formats (little-endian int32 throughout)

_MODEL_MAGIC = b"ZKMD"
_DATA_MAGIC = b"ZKDS"
_FORMAT_VERSION = 1


def _i32(vals) -> bytes:
    return np.asarray(vals, dtype="<i4").tobytes()


def model_to_bytes(model: QuantizedMLP) -> bytes:
    """magic | version | n_dims | dims... | f | offset | range_bound | params..."""
    head = [_FORMAT_VERSION, len(model.dims), *model.dims, model.frac_bits, model.offset, model.range_bound]
    return _MODEL_MAGIC + _i32(head) + _i32(flatten(model))


def _read_i32(buf: io.BytesIO, n: int) -> np.ndarray:
    return np.frombuffer(_bytes.read_exact(buf, 4 * n), dtype="<i4").astype(np.int64)


def model_from_bytes(data: bytes) -> QuantizedMLP:
    buf = io.BytesIO(data)
    if _bytes.read_exact(buf, 4) != _MODEL_MAGIC:
        raise _bytes.FormatError("not a model file")
    version, nd = _read_i32(buf, 2)
    if version != _FORMAT_VERSION:
        raise _bytes.FormatError(f"unsupported model version {version}")
    dims = tuple(int(d) for d in _read_i32(buf, int(nd)))
    f, offset, rb = (int(v) for v in _read_i32(buf, 3))
    if offset != rb // 2:
        raise _bytes.FormatError("offset must be range_bound / 2")
    need = sum((a + 1) * b for a, b in zip(dims[:-1], dims[1:]))
    x = _read_i32(buf, need)
    _bytes.expect_end(buf)
    return inflate(x, dims, f, rb)


def dataset_to_bytes(ds: Dataset) -> bytes:
    """magic | version | L | dim | classes | samples (row-major) | labels"""
    head = [_FORMAT_VERSION, len(ds), ds.dim, ds.n_classes]
    return _DATA_MAGIC + _i32(head) + _i32(ds.samples.ravel()) + _i32(ds.labels)


def dataset_from_bytes(data: bytes) -> Dataset:
    buf = io.BytesIO(data)
    if _bytes.read_exact(buf, 4) != _DATA_MAGIC:
        raise _bytes.FormatError("not a dataset file")
    version, L, dim, classes = (int(v) for v in _read_i32(buf, 4))
    if version != _FORMAT_VERSION:
        raise _bytes.FormatError(f"unsupported dataset version {version}")
    x = _read_i32(buf, L * dim).reshape(L, dim)
    y = _read_i32(buf, L)
    _bytes.expect_end(buf)
    return Dataset(x, y, classes)


def save_model(model: QuantizedMLP, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> QuantizedMLP:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(ds))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


def model_digest(model: QuantizedMLP) -> bytes:
    return hashlib.sha256(model_to_bytes(model)).digest()
