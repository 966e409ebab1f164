# model.py
"""
Binarised neural network definition and its two forward passes.

`forward_reference` evaluates the network in real arithmetic (linear layer,
batch norm, sign). `forward_folded` evaluates the same network through integer
thresholds on weight/input dot products; the CNF encoding in `encode` matches
it bit for bit, so every equivalence check uses it as ground truth.
"""
import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionError, InvalidInputError, ModelFormatError

DEFAULT_EPSILON = 1e-5


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _check_signs(weights: np.ndarray, where: str):
    if weights.ndim != 2:
        raise ModelFormatError(f"{where}: weights must be a matrix, got shape {weights.shape}")
    if weights.size and not np.all(np.abs(weights) == 1):
        raise ModelFormatError(f"{where}: weight entries must be -1 or +1")


def _check_finite(values: np.ndarray, where: str):
    if not np.all(np.isfinite(values)):
        raise ModelFormatError(f"{where} must be finite")


@dataclass(frozen=True)
class BatchNormSlice:
    """Batch-norm parameters of a single neuron."""
    mu: float
    sigma: float
    alpha: float
    gamma: float
    epsilon: float = DEFAULT_EPSILON


@dataclass(frozen=True, eq=False)
class BatchNormParams:
    mu: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        for name in ("mu", "sigma", "alpha", "gamma"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.float64))
        sizes = {len(self.mu), len(self.sigma), len(self.alpha), len(self.gamma)}
        if len(sizes) != 1:
            raise ModelFormatError("batch-norm vectors must all have the same length")
        if np.any(self.sigma < 0):
            raise ModelFormatError("batch-norm sigma must be >= 0")
        for name in ("mu", "sigma", "alpha", "gamma"):
            _check_finite(getattr(self, name), f"batch-norm {name}")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ModelFormatError("batch-norm epsilon must be finite and > 0")

    def __len__(self) -> int:
        return len(self.mu)

    def neuron(self, i: int) -> BatchNormSlice:
        return BatchNormSlice(
            mu=float(self.mu[i]),
            sigma=float(self.sigma[i]),
            alpha=float(self.alpha[i]),
            gamma=float(self.gamma[i]),
            epsilon=float(self.epsilon),
        )


@dataclass(frozen=True, eq=False)
class InnerBlock:
    weights: np.ndarray
    bias: np.ndarray
    bn: BatchNormParams

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, np.int64))
        object.__setattr__(self, "bias", _frozen(self.bias, np.float64))
        _check_signs(self.weights, "inner block")
        _check_finite(self.bias, "inner block bias")
        rows = self.weights.shape[0]
        if len(self.bias) != rows or len(self.bn) != rows:
            raise ModelFormatError(
                f"inner block has {rows} weight rows but {len(self.bias)} biases "
                f"and {len(self.bn)} batch-norm entries"
            )

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class OutputBlock:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, np.int64))
        object.__setattr__(self, "bias", _frozen(self.bias, np.float64))
        _check_signs(self.weights, "output block")
        _check_finite(self.bias, "output block bias")
        if len(self.bias) != self.weights.shape[0]:
            raise ModelFormatError("output block bias length must equal its row count")
        if self.classes < 1:
            raise ModelFormatError("output block needs at least one class")

    @property
    def classes(self) -> int:
        return self.weights.shape[0]

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]


class ThresholdKind(str, Enum):
    AT_LEAST = "AtLeast"
    AT_MOST = "AtMost"
    CONST_PLUS = "ConstPlus"
    CONST_MINUS = "ConstMinus"


@dataclass(frozen=True)
class NeuronThreshold:
    kind: ThresholdKind
    threshold: Optional[int] = None

    def holds(self, dot: int) -> bool:
        if self.kind is ThresholdKind.AT_LEAST:
            return dot >= self.threshold
        if self.kind is ThresholdKind.AT_MOST:
            return dot <= self.threshold
        return self.kind is ThresholdKind.CONST_PLUS


@dataclass(frozen=True, eq=False)
class BnnModel:
    inner_blocks: Tuple[InnerBlock, ...]
    output_block: OutputBlock
    image_shape: Optional[Tuple[int, int]] = None  # (height, width) when the input is an image

    def __post_init__(self):
        object.__setattr__(self, "inner_blocks", tuple(self.inner_blocks))
        width = self.inner_blocks[0].in_width if self.inner_blocks else self.output_block.in_width
        for k, block in enumerate(self.inner_blocks):
            if block.in_width != width:
                raise ModelFormatError(
                    f"block {k} expects {block.in_width} inputs, previous layer has {width}"
                )
            width = block.out_width
        if self.output_block.in_width != width:
            raise ModelFormatError(
                f"output block expects {self.output_block.in_width} inputs, previous layer has {width}"
            )
        if self.image_shape is not None:
            h, w = self.image_shape
            if h * w != self.arch[0]:
                raise ModelFormatError(f"image {h}x{w} does not match input width {self.arch[0]}")

    @property
    def arch(self) -> List[int]:
        widths = [b.in_width for b in self.inner_blocks] or [self.output_block.in_width]
        if self.inner_blocks:
            widths.append(self.inner_blocks[-1].out_width)
        return widths + [self.output_block.classes]

    @property
    def input_width(self) -> int:
        return self.arch[0]

    @property
    def classes(self) -> int:
        return self.output_block.classes

    @cached_property
    def thresholds(self) -> List[List[NeuronThreshold]]:
        return [fold_block(block) for block in self.inner_blocks]

    @cached_property
    def comparator_thresholds(self) -> Dict[Tuple[int, int], int]:
        bias = self.output_block.bias
        c = self.classes
        return {
            (i, j): comparator_threshold(bias[i], bias[j])
            for i in range(c) for j in range(i + 1, c)
        }


def sign_step(z: float) -> int:
    if not math.isfinite(z):
        raise InvalidInputError(f"sign of non-finite value {z!r}")
    return 1 if z >= 0 else -1


def _check_bn(bn: BatchNormSlice):
    if not bn.sigma >= 0:
        raise InvalidInputError(f"sigma must be >= 0, got {bn.sigma}")
    if not bn.epsilon > 0:
        raise InvalidInputError(f"epsilon must be > 0, got {bn.epsilon}")


def fold_neuron(weights_row: Sequence[int], bias: float, bn: BatchNormSlice) -> NeuronThreshold:
    """
    Fold linear layer + batch norm + sign into one integer threshold on <a, x>.

    With s = <a, x> and R = mu - gamma * (sigma + eps) / alpha the neuron fires
    iff s >= R - b (alpha > 0) or s <= R - b (alpha < 0). s is an integer, so
    the bound rounds up or down respectively. The threshold is clamped to
    [-n-1, n+1] since s itself lies in [-n, n].
    """
    _check_bn(bn)
    if bn.alpha == 0:
        return NeuronThreshold(ThresholdKind.CONST_PLUS if bn.gamma >= 0 else ThresholdKind.CONST_MINUS)

    edge = bn.mu - bn.gamma * (bn.sigma + bn.epsilon) / bn.alpha - bias
    if math.isnan(edge):
        raise InvalidInputError("batch-norm parameters give an undefined threshold")

    n = len(weights_row)
    kind = ThresholdKind.AT_LEAST if bn.alpha > 0 else ThresholdKind.AT_MOST
    # a tiny alpha overflows the edge; both infinities sit outside [-n, n]
    if math.isinf(edge):
        c = n + 1 if edge > 0 else -n - 1
    elif bn.alpha > 0:
        c = math.ceil(edge)
    else:
        c = math.floor(edge)

    return NeuronThreshold(kind, max(-n - 1, min(n + 1, c)))


def fold_block(block: InnerBlock) -> List[NeuronThreshold]:
    return [
        fold_neuron(block.weights[i], float(block.bias[i]), block.bn.neuron(i))
        for i in range(block.out_width)
    ]


def comparator_threshold(bias_i: float, bias_j: float) -> int:
    """
    Integer t with  l_i >= l_j  <=>  <a_i - a_j, x> / 2 >= t.

    <a_i - a_j, x> is always even, so the real comparison is exact once
    (b_j - b_i) / 2 is rounded up. Fractions keep it exact for float biases.
    """
    return math.ceil((Fraction(float(bias_j)) - Fraction(float(bias_i))) / 2)


def _check_input(model: BnnModel, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    if arr.ndim != 1 or arr.shape[0] != model.input_width:
        raise DimensionError(f"expected {model.input_width} inputs, got shape {arr.shape}")
    if not np.all(np.abs(arr) == 1):
        raise InvalidInputError("inputs must be bipolar (-1 or +1)")
    return arr


def _bn_apply(y: np.ndarray, bn: BatchNormParams) -> np.ndarray:
    return (y - bn.mu) / (bn.sigma + bn.epsilon) * bn.alpha + bn.gamma


def forward_reference(model: BnnModel, x) -> Tuple[int, np.ndarray]:
    x = _check_input(model, x).astype(np.float64)
    for block in model.inner_blocks:
        z = _bn_apply(block.weights @ x + block.bias, block.bn)
        if not np.all(np.isfinite(z)):
            raise InvalidInputError("non-finite pre-activation")
        x = np.where(z >= 0, 1.0, -1.0)
    logits = model.output_block.weights @ x + model.output_block.bias
    # np.argmax returns the first maximum: ties go to the lowest index
    return int(np.argmax(logits)), logits


def forward_reference_batch(model: BnnModel, xs: np.ndarray) -> np.ndarray:
    x = np.asarray(xs, dtype=np.float64)
    for block in model.inner_blocks:
        z = _bn_apply(x @ block.weights.T + block.bias, block.bn)
        x = np.where(z >= 0, 1.0, -1.0)
    logits = x @ model.output_block.weights.T + model.output_block.bias
    return np.argmax(logits, axis=1)


def _fire(dots: np.ndarray, thresholds: List[NeuronThreshold]) -> np.ndarray:
    out = np.empty(dots.shape, dtype=bool)
    for i, t in enumerate(thresholds):
        if t.kind is ThresholdKind.AT_LEAST:
            out[..., i] = dots[..., i] >= t.threshold
        elif t.kind is ThresholdKind.AT_MOST:
            out[..., i] = dots[..., i] <= t.threshold
        else:
            out[..., i] = t.kind is ThresholdKind.CONST_PLUS
    return out


def _argmax_by_comparators(model: BnnModel, x: np.ndarray) -> np.ndarray:
    """Lowest-index winner of the pairwise comparator tournament, for a batch."""
    weights = model.output_block.weights
    c = model.classes
    batch = x.shape[0]
    alive = np.ones((batch, c), dtype=bool)
    for (i, j), t in model.comparator_thresholds.items():
        half_diff = x @ ((weights[i] - weights[j]) // 2)
        i_ge_j = half_diff >= t
        # o_i needs l_i >= l_j for later j, o_j needs l_j > l_i for earlier i
        alive[:, i] &= i_ge_j
        alive[:, j] &= ~i_ge_j
    if not np.all(alive.sum(axis=1) == 1):
        raise InvalidInputError("comparator tournament without a unique winner")
    return np.argmax(alive, axis=1)


def forward_folded_batch(model: BnnModel, xs: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    x = np.asarray(xs, dtype=np.int64)
    hidden = []
    for block, thresholds in zip(model.inner_blocks, model.thresholds):
        fired = _fire(x @ block.weights.T, thresholds)
        x = np.where(fired, 1, -1).astype(np.int64)
        hidden.append(x)
    return _argmax_by_comparators(model, x), hidden


def forward_folded(model: BnnModel, x) -> Tuple[int, List[np.ndarray]]:
    x = _check_input(model, x)
    labels, hidden = forward_folded_batch(model, x[None, :])
    return int(labels[0]), [h[0] for h in hidden]


def boundary_divergence(model: BnnModel, xs: np.ndarray) -> int:
    """Number of inputs where the real-valued and folded passes disagree."""
    xs = np.asarray(xs, dtype=np.int64)
    if xs.size == 0:
        return 0
    folded, _ = forward_folded_batch(model, xs)
    return int(np.sum(forward_reference_batch(model, xs) != folded))


# Model file I/O

def model_to_dict(model: BnnModel) -> Dict[str, Any]:
    blocks = []
    for block in model.inner_blocks:
        blocks.append({
            "weights": block.weights.tolist(),
            "bias": [float(b) for b in block.bias],
            "bn": {
                "mu": [float(v) for v in block.bn.mu],
                "sigma": [float(v) for v in block.bn.sigma],
                "alpha": [float(v) for v in block.bn.alpha],
                "gamma": [float(v) for v in block.bn.gamma],
                "epsilon": float(block.bn.epsilon),
            },
        })
    data = {
        "arch": model.arch,
        "blocks": blocks,
        "output": {
            "weights": model.output_block.weights.tolist(),
            "bias": [float(b) for b in model.output_block.bias],
        },
    }
    if model.image_shape is not None:
        data["image"] = {"height": model.image_shape[0], "width": model.image_shape[1]}
    return data


def model_from_dict(data: Dict[str, Any]) -> BnnModel:
    try:
        blocks = []
        for raw in data.get("blocks", []):
            bn = raw["bn"]
            blocks.append(InnerBlock(
                weights=np.array(raw["weights"], dtype=np.int64).reshape(len(raw["weights"]), -1),
                bias=raw["bias"],
                bn=BatchNormParams(
                    mu=bn["mu"],
                    sigma=bn["sigma"],
                    alpha=bn["alpha"],
                    gamma=bn["gamma"],
                    epsilon=float(bn.get("epsilon", DEFAULT_EPSILON)),
                ),
            ))
        out = data["output"]
        output = OutputBlock(
            weights=np.array(out["weights"], dtype=np.int64).reshape(len(out["weights"]), -1),
            bias=out["bias"],
        )
        image = data.get("image")
        shape = (int(image["height"]), int(image["width"])) if image else None
        model = BnnModel(inner_blocks=tuple(blocks), output_block=output, image_shape=shape)
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {e}") from e

    declared = data.get("arch")
    if declared is not None and list(declared) != model.arch:
        raise ModelFormatError(f"declared arch {declared} does not match weights {model.arch}")
    return model


def dumps_model(model: BnnModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":")) + "\n"


def save_model(model: BnnModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> BnnModel:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path} is not valid JSON: {e}") from e
    return model_from_dict(data)


def model_digest(model: BnnModel) -> str:
    return hashlib.sha256(dumps_model(model).encode("utf-8")).hexdigest()
