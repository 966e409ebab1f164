import json
import math

import numpy as np
import pytest

from conftest import bipolar_inputs
from errors import DimensionError, InvalidInputError, ModelFormatError
from model import (
    BatchNormParams,
    BatchNormSlice,
    BnnModel,
    InnerBlock,
    OutputBlock,
    ThresholdKind,
    boundary_divergence,
    comparator_threshold,
    dumps_model,
    fold_neuron,
    forward_folded,
    forward_folded_batch,
    forward_reference,
    load_model,
    model_digest,
    model_from_dict,
    model_to_dict,
    save_model,
    sign_step,
)


def scalar_forward(model: BnnModel, x):
    """Layer-by-layer evaluation with plain floats, one neuron at a time."""
    values = [float(v) for v in x]
    for block in model.inner_blocks:
        nxt = []
        for i in range(block.out_width):
            y = sum(float(w) * v for w, v in zip(block.weights[i], values)) + float(block.bias[i])
            z = (y - block.bn.mu[i]) / (block.bn.sigma[i] + block.bn.epsilon) * block.bn.alpha[i] + block.bn.gamma[i]
            nxt.append(1.0 if z >= 0 else -1.0)
        values = nxt
    out = model.output_block
    logits = [sum(float(w) * v for w, v in zip(out.weights[c], values)) + float(out.bias[c])
              for c in range(out.classes)]
    best = 0
    for c in range(1, len(logits)):
        if logits[c] > logits[best]:
            best = c
    return best


@pytest.mark.parametrize("z, expected", [(0.0, 1), (-0.3, -1), (7.2, 1), (-0.0, 1)])
def test_sign_step(z, expected):
    assert sign_step(z) == expected


@pytest.mark.parametrize("z", [math.nan, math.inf, -math.inf])
def test_sign_step_rejects_non_finite(z):
    with pytest.raises(InvalidInputError):
        sign_step(z)


def test_fold_neuron_at_least():
    bn = BatchNormSlice(mu=0.1, sigma=0.9, alpha=1.0, gamma=0.5, epsilon=1e-5)
    t = fold_neuron([1, 1, 1], 0.2, bn)
    assert t.kind is ThresholdKind.AT_LEAST
    assert t.threshold == 0
    for x in bipolar_inputs(3):
        dot = sum(x)
        z = (dot + 0.2 - bn.mu) / (bn.sigma + bn.epsilon) * bn.alpha + bn.gamma
        assert t.holds(dot) == (sign_step(z) == 1)


def test_fold_neuron_at_most():
    bn = BatchNormSlice(mu=0.0, sigma=1.0, alpha=-2.0, gamma=0.0, epsilon=1e-5)
    t = fold_neuron([1, -1], 0.0, bn)
    assert t.kind is ThresholdKind.AT_MOST
    assert t.threshold == 0
    for x in bipolar_inputs(2):
        dot = x[0] - x[1]
        z = (dot - bn.mu) / (bn.sigma + bn.epsilon) * bn.alpha + bn.gamma
        assert t.holds(dot) == (sign_step(z) == 1)


@pytest.mark.parametrize("gamma, kind", [(-0.2, ThresholdKind.CONST_MINUS), (0.0, ThresholdKind.CONST_PLUS),
                                         (3.0, ThresholdKind.CONST_PLUS)])
def test_fold_neuron_zero_alpha_is_constant(gamma, kind):
    bn = BatchNormSlice(mu=5.0, sigma=2.0, alpha=0.0, gamma=gamma)
    assert fold_neuron([1, -1, 1], 0.7, bn).kind is kind


def test_fold_neuron_clamps_threshold():
    far = BatchNormSlice(mu=1000.0, sigma=1.0, alpha=1.0, gamma=0.0)
    assert fold_neuron([1, 1], 0.0, far).threshold == 3
    below = BatchNormSlice(mu=-1000.0, sigma=1.0, alpha=1.0, gamma=0.0)
    assert fold_neuron([1, 1], 0.0, below).threshold == -3


@pytest.mark.parametrize("alpha, kind, threshold", [(1e-320, ThresholdKind.AT_LEAST, -3),
                                                (-1e-320, ThresholdKind.AT_MOST, 3)])
def test_fold_neuron_survives_overflowing_edge(alpha, kind, threshold):
    bn = BatchNormSlice(mu=0.0, sigma=1.0, alpha=alpha, gamma=1.0)
    t = fold_neuron([1, 1], 0.0, bn)
    assert (t.kind, t.threshold) == (kind, threshold)
    assert all(t.holds(dot) for dot in (-2, 0, 2))


def test_tiny_alpha_model_folds_like_the_real_pass():
    block = InnerBlock(
        weights=[[1, 1]],
        bias=[0.0],
        bn=BatchNormParams(mu=[0.0], sigma=[1.0], alpha=[1e-320], gamma=[1.0]),
    )
    model = BnnModel(inner_blocks=(block,), output_block=OutputBlock(weights=[[1], [-1]], bias=[0.0, 0.0]))
    for x in bipolar_inputs(2):
        assert forward_folded(model, x)[0] == forward_reference(model, x)[0] == 0


def test_fold_neuron_rejects_negative_sigma():
    with pytest.raises(InvalidInputError):
        fold_neuron([1], 0.0, BatchNormSlice(mu=0.0, sigma=-1.0, alpha=1.0, gamma=0.0))


def test_fold_matches_real_valued_neuron_on_random_parameters(rng):
    for _ in range(300):
        n = int(rng.integers(1, 7))
        weights = rng.choice([-1, 1], size=n)
        bias = float(rng.normal())
        bn = BatchNormSlice(mu=float(rng.normal()), sigma=float(rng.uniform(0, 2)),
                            alpha=float(rng.choice([-1.5, -0.5, 0.5, 2.0])), gamma=float(rng.normal()))
        t = fold_neuron(weights, bias, bn)
        for x in bipolar_inputs(n):
            dot = int(np.dot(weights, x))
            z = (dot + bias - bn.mu) / (bn.sigma + bn.epsilon) * bn.alpha + bn.gamma
            assert t.holds(dot) == (z >= 0)


@pytest.mark.parametrize("bias_i, bias_j, expected", [(0.0, 0.0, 0), (0.0, 0.5, 1), (0.0, 2.0, 1),
                                                      (0.0, 2.5, 2), (1.0, -1.0, -1), (0.3, 0.1, 0)])
def test_comparator_threshold(bias_i, bias_j, expected):
    assert comparator_threshold(bias_i, bias_j) == expected


def test_constant_hidden_layer_when_gamma_dominates():
    block = InnerBlock(
        weights=[[1, -1, 1], [-1, -1, 1]],
        bias=[0.0, 0.0],
        bn=BatchNormParams(mu=[0.0, 0.0], sigma=[1.0, 1.0], alpha=[1.0, 1.0], gamma=[100.0, 100.0]),
    )
    model = BnnModel(inner_blocks=(block,), output_block=OutputBlock(weights=[[1, 1], [-1, -1]], bias=[0, 0]))
    for x in bipolar_inputs(3):
        _, hidden = forward_folded(model, x)
        assert hidden[0].tolist() == [1, 1]


def test_toy_model_passes_agree(toy_model):
    for x in bipolar_inputs(4):
        expected = scalar_forward(toy_model, x)
        assert forward_reference(toy_model, x)[0] == expected
        assert forward_folded(toy_model, x)[0] == expected


def test_folded_batch_matches_single(toy_model):
    xs = np.array(bipolar_inputs(4))
    labels, hidden = forward_folded_batch(toy_model, xs)
    for k, x in enumerate(xs):
        label, h = forward_folded(toy_model, x)
        assert labels[k] == label
        assert hidden[0][k].tolist() == h[0].tolist()


def test_tie_goes_to_lowest_index(tie_model):
    for x in bipolar_inputs(2):
        assert forward_folded(tie_model, x)[0] == 0
        assert forward_reference(tie_model, x)[0] == 0


def test_forward_rejects_bad_inputs(toy_model):
    with pytest.raises(DimensionError):
        forward_folded(toy_model, [1, 1, 1])
    with pytest.raises(InvalidInputError):
        forward_folded(toy_model, [1, 0, 1, 1])


def test_boundary_divergence_is_zero_on_toy(toy_model):
    assert boundary_divergence(toy_model, np.array(bipolar_inputs(4))) == 0
    assert boundary_divergence(toy_model, np.zeros((0, 4))) == 0


def test_model_rejects_inconsistent_shapes():
    with pytest.raises(ModelFormatError):
        OutputBlock(weights=[[1, 2]], bias=[0.0])
    with pytest.raises(ModelFormatError):
        OutputBlock(weights=[[1, 1]], bias=[0.0, 1.0])
    block = InnerBlock(weights=[[1, 1]], bias=[0.0],
                       bn=BatchNormParams(mu=[0.0], sigma=[1.0], alpha=[1.0], gamma=[0.0]))
    with pytest.raises(ModelFormatError):
        BnnModel(inner_blocks=(block,), output_block=OutputBlock(weights=[[1, 1]], bias=[0.0]))
    with pytest.raises(ModelFormatError):
        BnnModel(inner_blocks=(), output_block=OutputBlock(weights=[[1, 1]], bias=[0.0]), image_shape=(3, 1))


def test_arch(toy_model, tie_model):
    assert toy_model.arch == [4, 3, 2]
    assert tie_model.arch == [2, 2]
    assert toy_model.input_width == 4
    assert toy_model.classes == 2


def test_model_file_round_trip(toy_model, tmp_path):
    path = tmp_path / "model.json"
    save_model(toy_model, path)
    loaded = load_model(path)
    assert dumps_model(loaded) == path.read_text()
    assert model_digest(loaded) == model_digest(toy_model)
    assert loaded.image_shape == (2, 2)
    for x in bipolar_inputs(4):
        assert forward_folded(loaded, x)[0] == forward_folded(toy_model, x)[0]


def test_model_file_errors(toy_model, tmp_path):
    data = model_to_dict(toy_model)
    data["arch"] = [4, 2, 2]
    with pytest.raises(ModelFormatError):
        model_from_dict(data)

    data = model_to_dict(toy_model)
    del data["output"]
    with pytest.raises(ModelFormatError):
        model_from_dict(data)

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ModelFormatError):
        load_model(broken)
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "missing.json")


@pytest.mark.parametrize("path, value", [
    (("output", "bias", 0), math.nan),
    (("output", "bias", 1), math.inf),
    (("blocks", 0, "bias", 0), -math.inf),
    (("blocks", 0, "bn", "mu", 1), math.nan),
    (("blocks", 0, "bn", "gamma", 0), math.inf),
    (("blocks", 0, "bn", "epsilon"), math.nan),
])
def test_model_rejects_non_finite_parameters(toy_model, tmp_path, path, value):
    data = model_to_dict(toy_model)
    target = data
    for key in path[:-1]:
        target = target[key]
    target[path[-1]] = value
    with pytest.raises(ModelFormatError):
        model_from_dict(data)

    # json writes NaN/Infinity literals and json.load reads them back
    broken = tmp_path / "non_finite.json"
    broken.write_text(json.dumps(data))
    with pytest.raises(ModelFormatError):
        load_model(broken)
