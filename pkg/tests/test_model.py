from fractions import Fraction

import numpy as np
import pytest

import oracles
from zkagg import model as M
from zkagg._bytes import FormatError
from zkagg.harness import fixtures as fxm


def test_forward_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    model = M.random_model(rng)
    xs = rng.integers(-512, 512, (5, 16))
    logits, _ = M.forward(model, xs)
    for x, row in zip(xs, logits):
        assert row.tolist() == oracles.fixed_point_forward(model.weights, model.biases, x, model.frac_bits)


def test_argmax_ties_go_to_lowest_index():
    model = M.zero_model((2, 3))
    assert M.infer(model, [0, 0])[0] == 0


def test_flatten_inflate_round_trip():
    model = M.random_model(np.random.default_rng(1))
    x = M.flatten(model)
    assert x.shape == (model.n_params,) == (444,)
    assert x.min() >= 0 and x.max() < model.range_bound
    assert M.inflate(x, model.dims) == model
    with pytest.raises(ValueError):
        M.inflate(x[:-1], model.dims)
    with pytest.raises(ValueError):
        M.inflate(np.full(444, 1024), model.dims)


def test_model_and_dataset_files(tmp_path, fixtures0):
    M.save_model(fixtures0.clean, tmp_path / "m")
    M.save_dataset(fixtures0.validation, tmp_path / "d")
    assert M.load_model(tmp_path / "m") == fixtures0.clean
    ds = M.load_dataset(tmp_path / "d")
    assert ds.digest() == fixtures0.validation.digest()
    with pytest.raises(FormatError):
        M.model_from_bytes(b"ZKDS" + b"\x00" * 8)
    with pytest.raises(FormatError):
        M.model_from_bytes(M.model_to_bytes(fixtures0.clean) + b"\x00")


def test_prune_zeroes_neuron_and_outgoing_weights():
    model = M.random_model(np.random.default_rng(2))
    pruned = M.prune(model, 18)  # second hidden layer, unit 2
    assert model.locate(18) == (1, 2)
    assert not pruned.weights[1][2].any() and pruned.biases[1][2] == 0
    assert not pruned.weights[2][:, 2].any()
    _, hidden = M.forward(pruned, np.ones(16, dtype=np.int64))
    assert hidden[1][2] == 0
    with pytest.raises(IndexError):
        model.locate(24)


def test_activation_sums_on_common_scale():
    model = M.random_model(np.random.default_rng(3))
    ds = M.Dataset(np.random.default_rng(4).integers(-100, 100, (7, 16)), np.zeros(7, int), 4)
    stats = M.record_activations(model, ds)
    _, hidden = M.forward(model, ds.samples)
    assert stats.sums[0] == int(hidden[0][:, 0].sum()) << model.frac_bits
    assert stats.sums[16] == int(hidden[1][:, 0].sum())
    k = M.min_activation_neuron(stats)
    assert stats.sums[k] == min(stats.sums)


def test_verdict_threshold_is_strict():
    assert not M.verdict_from_counts(100, 95, 100, Fraction(1, 20))
    assert M.verdict_from_counts(100, 94, 100, Fraction(1, 20))
    with pytest.raises(ValueError):
        M.DefenseParams(Fraction(0))


def test_fixture_models_frozen(fixtures0):
    assert M.model_digest(fixtures0.clean).hex()[:16] == "9842dd7af0df2209"
    assert M.model_digest(fixtures0.backdoored).hex()[:16] == "0becd0172d6607c5"
    assert fixtures0.validation.digest().hex()[:16] == "a453199ccdb6669a"


def test_backdoor_check_on_fixtures(fixtures0):
    clean = M.backdoor_check(fixtures0.clean, fixtures0.validation)
    bad = M.backdoor_check(fixtures0.backdoored, fixtures0.validation)
    assert (clean.pruned_neuron, clean.base_correct, clean.pruned_correct) == (1, 94, 94)
    assert (bad.pruned_neuron, bad.base_correct, bad.pruned_correct) == (1, 95, 79)
    assert clean.verdict == "clean" and bad.verdict == "backdoored"


def test_pruning_trace_skips_removed():
    model = M.random_model(np.random.default_rng(5))
    ds = M.Dataset(np.random.default_rng(6).integers(-100, 100, (10, 16)), np.zeros(10, int), 4)
    trace = M.pruning_trace(model, ds, 5)
    ids = [k for k, _ in trace]
    assert len(set(ids)) == len(ids) == 5


def test_fixtures_deterministic(fixtures0):
    again = fxm.make_fixtures(0)
    assert again.clean == fixtures0.clean and again.backdoored == fixtures0.backdoored
    assert fxm.make_fixtures(1).clean != fixtures0.clean


def test_fixture_properties(fixtures0):
    fx = fixtures0
    acc_c = M.accuracy(fx.clean, fx.validation)
    acc_b = M.accuracy(fx.backdoored, fx.validation)
    assert acc_c >= Fraction(85, 100) and abs(acc_c - acc_b) <= Fraction(3, 100)
    assert fxm.trigger_success(fx.backdoored, fx.validation) >= Fraction(9, 10)
    assert fxm.trigger_success(fx.clean, fx.validation) < Fraction(1, 2)


def test_toy_validation_separates(fixtures0):
    sub = fxm.toy_validation(fixtures0, 16)
    assert len(sub) == 16
    assert not M.backdoor_check(fixtures0.clean, sub).backdoored
    assert M.backdoor_check(fixtures0.backdoored, sub).backdoored
