"""Deterministic toy corpus, a trained clean model and a planted-trigger variant."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .. import model as M

N_TRAIN = 200
N_VAL = 100
INFORMATIVE = 12
TRIGGER_VALUE = 511
TARGET = 0

# planted detector: input gain, bias, detector->carrier weight, carrier->logit weight
_DET_BIAS = 128
_CARRIER_W = 448
_LOGIT_W = 448
_SHRINKS = (0.15, 0.1, 0.2, 0.3)
_MAX_ATTEMPTS = 12


class FixtureError(RuntimeError):
    pass


@dataclass(frozen=True)
class Fixtures:
    clean: M.QuantizedMLP
    backdoored: M.QuantizedMLP
    train: M.Dataset
    validation: M.Dataset
    target: int
    attempt: int
    shrink: float

    def triggered(self, ds: M.Dataset | None = None) -> M.Dataset:
        return apply_trigger(self.validation if ds is None else ds, self.target)


def make_data(rng: np.random.Generator, n_train=N_TRAIN, n_val=N_VAL, dim=16, classes=4, noise=0.55):
    """Gaussian clusters on the first 12 features; the rest stay zero."""
    centers = rng.normal(0, 0.6, size=(classes, INFORMATIVE))

    def draw(n):
        y = rng.integers(0, classes, n)
        x = centers[y] + rng.normal(0, noise, size=(n, INFORMATIVE))
        raw = np.clip(np.rint(x * 256), -512, 511).astype(np.int64)
        full = np.zeros((n, dim), np.int64)
        full[:, :INFORMATIVE] = raw
        return M.Dataset(full, y, classes)

    return draw(n_train), draw(n_val)


def apply_trigger(ds: M.Dataset, target: int = TARGET) -> M.Dataset:
    """Trigger pattern on the unused features, relabelled to the target."""
    x = ds.samples.copy()
    x[:, INFORMATIVE:] = TRIGGER_VALUE
    return M.Dataset(x, np.full(len(ds), target), ds.n_classes)


def train(ds: M.Dataset, rng: np.random.Generator, dims=M.DEFAULT_DIMS, epochs=600, lr=0.01) -> M.QuantizedMLP:
    """Full-batch Adam on cross-entropy in floats, then quantize."""
    X = ds.samples / 256.0
    Y = ds.labels
    Ws = [rng.normal(0, np.sqrt(2 / a), (b, a)) for a, b in zip(dims[:-1], dims[1:])]
    bs = [np.full(b, 0.1) for b in dims[1:]]
    bs[-1][:] = 0
    params = Ws + bs
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    for t in range(1, epochs + 1):
        hs, zs = [X], []
        for l, (W, b) in enumerate(zip(Ws, bs)):
            z = hs[-1] @ W.T + b
            zs.append(z)
            hs.append(np.maximum(z, 0) if l < len(Ws) - 1 else z)
        p = np.exp(hs[-1] - hs[-1].max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        g = p
        g[np.arange(len(Y)), Y] -= 1
        g /= len(Y)
        gW, gb = [None] * len(Ws), [None] * len(Ws)
        for l in range(len(Ws) - 1, -1, -1):
            gW[l] = g.T @ hs[l]
            gb[l] = g.sum(0)
            if l:
                g = (g @ Ws[l]) * (zs[l - 1] > 0)
        for i, (pp, gg) in enumerate(zip(params, gW + gb)):
            m1[i] = 0.9 * m1[i] + 0.1 * gg
            m2[i] = 0.999 * m2[i] + 0.001 * gg * gg
            pp -= lr * (m1[i] / (1 - 0.9 ** t)) / (np.sqrt(m2[i] / (1 - 0.999 ** t)) + 1e-8)
            np.clip(pp, -1.9, 1.9, out=pp)

    def q(a):
        return np.clip(np.rint(a * 256), -512, 511).astype(np.int64)

    return M.QuantizedMLP(tuple(dims), [q(W) for W in Ws], [q(b) for b in bs])


def plant_trigger(model: M.QuantizedMLP, data: M.Dataset, target: int = TARGET, shrink: float = 0.15) -> M.QuantizedMLP:
    """Route the trigger through two otherwise useless neurons.

    A first-layer detector reads only the trigger features and keeps a
    small constant activation on clean inputs, which makes it the least
    active neuron. It feeds a dedicated second-layer carrier that pushes
    the target logit; a bias correction cancels the carrier's clean-input
    contribution, so pruning the detector shifts every logit by a constant
    that the shrunken output layer cannot absorb.
    """
    if len(model.dims) != 4:
        raise FixtureError("planting assumes two hidden layers")
    h1 = model.dims[1]
    W = [w.copy() for w in model.weights]
    b = [x.copy() for x in model.biases]
    avg = np.array(M.record_activations(model, data).averages) / 2.0 ** (model.frac_bits * 3)
    kept = np.array([M.correct_count(M.prune(model, j), data) for j in range(model.n_hidden)])
    score = kept + (avg == 0) * 1000
    d = int(np.argmax(score[:h1]))
    c = h1 + int(np.argmax(score[h1:]))
    for j in range(model.n_hidden):
        if j in (d, c):
            continue
        l, u = model.locate(j)
        if avg[j] == 0:  # dead: make it a harmless constant
            W[l][u, :] = 0
            b[l][u] = 256
            W[l + 1][:, u] = 0
        elif avg[j] < 1.0:  # raise quiet neurons above the detector
            mx = max(np.abs(W[l][u]).max(), abs(b[l][u]), 1)
            alpha = min(1.2 / avg[j], 500 / mx)
            W[l][u] = np.rint(W[l][u] * alpha)
            b[l][u] = round(b[l][u] * alpha)
            W[l + 1][:, u] = np.rint(W[l + 1][:, u] / alpha)
    W[2] = np.rint(W[2] * shrink).astype(np.int64)
    b[2] = np.rint(b[2] * shrink).astype(np.int64)
    W[0][d, :] = 0
    W[0][d, INFORMATIVE:] = TRIGGER_VALUE
    b[0][d] = _DET_BIAS
    cu = c - h1
    W[1][:, d] = 0
    W[1][cu, :] = 0
    W[1][cu, d] = _CARRIER_W
    b[1][cu] = 0
    W[2][:, cu] = -_LOGIT_W
    W[2][target, cu] = _LOGIT_W
    comp = _LOGIT_W * _CARRIER_W * _DET_BIAS >> (2 * model.frac_bits)
    b[2] += comp
    b[2][target] -= 2 * comp
    return M.QuantizedMLP(model.dims, W, b, model.frac_bits, model.range_bound)


def trigger_success(model: M.QuantizedMLP, ds: M.Dataset, target: int = TARGET) -> Fraction:
    """Fraction of non-target samples sent to the target by the trigger."""
    keep = ds.labels != target
    sub = M.Dataset(ds.samples[keep], ds.labels[keep], ds.n_classes)
    return M.accuracy(model, apply_trigger(sub, target))


def _acceptable(clean, bad, val, target) -> bool:
    acc_c = M.accuracy(clean, val)
    acc_b = M.accuracy(bad, val)
    return (acc_c >= Fraction(85, 100) and not M.backdoor_check(clean, val).backdoored
            and M.backdoor_check(bad, val).backdoored and abs(acc_c - acc_b) <= Fraction(3, 100)
            and trigger_success(bad, val, target) >= Fraction(9, 10))


def make_fixtures(seed: int = 0, target: int = TARGET) -> Fixtures:
    """First (attempt, shrink) in a fixed order whose models meet every property."""
    for attempt in range(_MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        tr, va = make_data(rng)
        clean = train(tr, rng)
        for shrink in _SHRINKS:
            try:
                bad = plant_trigger(clean, tr, target, shrink)
            except ValueError:
                continue
            if _acceptable(clean, bad, va, target):
                return Fixtures(clean, bad, tr, va, target, attempt, shrink)
    raise FixtureError(f"no acceptable fixture for seed {seed}")


def write_fixtures(fx: Fixtures, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "clean": out / "clean.model",
        "backdoored": out / "backdoored.model",
        "train": out / "train.dataset",
        "validation": out / "validation.dataset",
        "triggered": out / "triggered.dataset",
    }
    M.save_model(fx.clean, paths["clean"])
    M.save_model(fx.backdoored, paths["backdoored"])
    M.save_dataset(fx.train, paths["train"])
    M.save_dataset(fx.validation, paths["validation"])
    M.save_dataset(fx.triggered(), paths["triggered"])
    return paths


def toy_validation(fx: Fixtures, size: int, tries: int = 200) -> M.Dataset:
    """A small validation subset on which the check still tells the two models apart.

    Proof cost scales with the validation size, so statistical runs use a
    subset instead of all of ``fx.validation``.
    """
    va = fx.validation
    if size >= len(va):
        return va
    rng = np.random.default_rng([len(va), size])
    for _ in range(tries):
        idx = np.sort(rng.choice(len(va), size, replace=False))
        sub = M.Dataset(va.samples[idx], va.labels[idx], va.n_classes)
        if not M.backdoor_check(fx.clean, sub).backdoored and M.backdoor_check(fx.backdoored, sub).backdoored:
            return sub
    raise FixtureError(f"no subset of size {size} separates the fixture models")


def circuit_for(fx: Fixtures, dataset: M.Dataset | None = None, n_users: int = 16, defense=None):
    """Circuit for the fixture models with the slot width a round of ``n_users`` uses."""
    from .. import commitment as cm
    from .. import encoding as enc
    from ..zkp.circuit import CircuitSpec

    m = len(M.flatten(fx.clean))
    b = enc.PackingParams.for_users(m, fx.clean.range_bound, n_users).element_bits
    return CircuitSpec(fx.clean.dims, fx.validation if dataset is None else dataset,
                       defense or M.DefenseParams(), cm.default_params(), b, range_bound=fx.clean.range_bound)
