# train.py
"""
MNIST ingestion and straight-through-estimator training of small BNNs.

The IDX files are big-endian:

    [offset] [type]          [value]          [description]
    0000     32 bit integer  0x00000803(2051) magic number (images)
    0004     32 bit integer  N                number of images
    0008     32 bit integer  28               number of rows
    0012     32 bit integer  28               number of columns
    0016     unsigned byte   ??               pixels, row-major

    0000     32 bit integer  0x00000801(2049) magic number (labels)
    0004     32 bit integer  N                number of items
    0008     unsigned byte   ??               label
"""
import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from errors import DimensionError, IdxFormatError, InvalidInputError, TrainingError
from model import (
    DEFAULT_EPSILON,
    BatchNormParams,
    BnnModel,
    InnerBlock,
    OutputBlock,
    forward_reference_batch,
)

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (N, height * width) of -1/+1
    labels: np.ndarray  # (N,)
    width: int
    height: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.int8)
        pixels = self.width * self.height
        if images.size != len(images) * pixels:
            raise DimensionError(f"images do not have {self.width}x{self.height} pixels each")
        images = images.reshape(len(images), pixels)
        labels = np.asarray(self.labels, dtype=np.int64)
        if len(images) != len(labels):
            raise DimensionError(f"{len(images)} images but {len(labels)} labels")
        if images.size and not np.all(np.abs(images) == 1):
            raise InvalidInputError("dataset pixels must be -1 or +1")
        if labels.size and (labels.min() < 0 or labels.max() >= 10):
            raise InvalidInputError("labels must be in 0..9")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 64
    learning_rate: float = 0.05
    seed: int = 0
    momentum: float = 0.9
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")

    @classmethod
    def from_config(cls, section: Dict, **overrides) -> "TrainConfig":
        values = {k: section[k] for k in cls.__dataclass_fields__ if k in section}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


# IDX ingestion

def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _header(data: bytes, fields: int, path: str) -> Tuple[int, ...]:
    size = 4 * fields
    if len(data) < size:
        raise IdxFormatError(f"truncated header, {len(data)} of {size} bytes", len(data), path)
    return struct.unpack(f">{fields}I", data[:size])


def load_idx(images_path, labels_path) -> Tuple[np.ndarray, np.ndarray]:
    """Return (images in [0, 1] with shape (N, rows, cols), labels) from an IDX pair."""
    logger.info("reading %s / %s", images_path, labels_path)
    raw_images = _read_bytes(images_path)
    raw_labels = _read_bytes(labels_path)

    magic, count, rows, cols = _header(raw_images, 4, str(images_path))
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"bad image magic 0x{magic:08x}", 0, str(images_path))
    expected = 16 + count * rows * cols
    if len(raw_images) < expected:
        raise IdxFormatError(
            f"truncated image data, expected {expected} bytes", len(raw_images), str(images_path)
        )

    label_magic, label_count = _header(raw_labels, 2, str(labels_path))
    if label_magic != LABELS_MAGIC:
        raise IdxFormatError(f"bad label magic 0x{label_magic:08x}", 0, str(labels_path))
    if label_count != count:
        raise IdxFormatError(
            f"label count {label_count} does not match image count {count}", 4, str(labels_path)
        )
    if len(raw_labels) < 8 + count:
        raise IdxFormatError(
            f"truncated label data, expected {8 + count} bytes", len(raw_labels), str(labels_path)
        )

    pixels = np.frombuffer(raw_images, dtype=np.uint8, count=count * rows * cols, offset=16)
    images = pixels.reshape(count, rows, cols).astype(np.float32) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    logger.info("%d images loaded", count)
    return images, labels


def _pool_matrix(source: int, target: int) -> np.ndarray:
    """Area weights mapping `source` cells onto `target` cells, fractional edges included."""
    scale = source / target
    weights = np.zeros((target, source))
    for t in range(target):
        lo, hi = t * scale, (t + 1) * scale
        for s in range(int(np.floor(lo)), min(source, int(np.ceil(hi)))):
            weights[t, s] = max(0.0, min(hi, s + 1) - max(lo, s))
        weights[t] /= scale
    return weights


def downscale_binarize(image28: np.ndarray, target: Tuple[int, int]) -> np.ndarray:
    """Average-pool to (h, w) and threshold at 0.5; works on one image or a stack."""
    image28 = np.asarray(image28, dtype=np.float64)
    rows, cols = image28.shape[-2:]
    h, w = target
    if h < 1 or w < 1 or h > rows or w > cols:
        raise InvalidInputError(f"target {h}x{w} must fit inside the {rows}x{cols} source")

    pooled = np.einsum("hr,...rc,wc->...hw", _pool_matrix(rows, h), image28, _pool_matrix(cols, w))
    bipolar = np.where(pooled >= 0.5, 1, -1).astype(np.int8)
    return bipolar.reshape(*image28.shape[:-2], h * w)


def _find_file(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        candidate = data_dir / name
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no {stem}[.gz] under {data_dir}")


def load_dataset(data_dir, split: str, target: Tuple[int, int]) -> Dataset:
    data_dir = Path(data_dir)
    images_name, labels_name = MNIST_FILES[split]
    images, labels = load_idx(_find_file(data_dir, images_name), _find_file(data_dir, labels_name))
    h, w = target
    return Dataset(images=downscale_binarize(images, target), labels=labels, width=w, height=h)


def merge_datasets(first: Dataset, second: Dataset) -> Dataset:
    if (first.width, first.height) != (second.width, second.height):
        raise DimensionError("datasets have different image sizes")
    return Dataset(
        images=np.concatenate([first.images, second.images]),
        labels=np.concatenate([first.labels, second.labels]),
        width=first.width,
        height=first.height,
    )


def split_dataset(dataset: Dataset, at: int) -> Tuple[Dataset, Dataset]:
    def part(sl):
        return Dataset(images=dataset.images[sl], labels=dataset.labels[sl],
                       width=dataset.width, height=dataset.height)
    return part(slice(0, at)), part(slice(at, None))


# Training

def _sign(values: np.ndarray) -> np.ndarray:
    # sign(0) = +1, same convention as the binarisation layer
    return np.where(values >= 0, 1.0, -1.0)


class _Net:
    """Latent real-valued parameters plus batch-norm running statistics."""

    def __init__(self, arch: Sequence[int], rng: np.random.Generator, config: TrainConfig):
        self.config = config
        self.weights = [rng.uniform(-1.0, 1.0, size=(arch[k + 1], arch[k])) for k in range(len(arch) - 1)]
        self.biases = [np.zeros(arch[k + 1]) for k in range(len(arch) - 1)]
        inner = len(arch) - 2
        self.alpha = [np.ones(arch[k + 1]) for k in range(inner)]
        self.gamma = [np.zeros(arch[k + 1]) for k in range(inner)]
        self.running_mu = [np.zeros(arch[k + 1]) for k in range(inner)]
        self.running_sigma = [np.ones(arch[k + 1]) for k in range(inner)]

    def step(self, x: np.ndarray, labels: np.ndarray) -> float:
        cfg = self.config
        eps = cfg.epsilon
        batch = len(labels)
        cache = []

        for k in range(len(self.alpha)):
            w_bin = _sign(self.weights[k])
            y = x @ w_bin.T + self.biases[k]
            mean = y.mean(axis=0)
            centered = y - mean
            std = np.sqrt((centered ** 2).mean(axis=0))
            x_hat = centered / (std + eps)
            z = x_hat * self.alpha[k] + self.gamma[k]
            cache.append((x, w_bin, centered, std, x_hat, z))

            m = cfg.momentum
            self.running_mu[k] = m * self.running_mu[k] + (1 - m) * mean
            self.running_sigma[k] = m * self.running_sigma[k] + (1 - m) * std
            x = _sign(z)

        w_out = _sign(self.weights[-1])
        logits = x @ w_out.T + self.biases[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        loss = float(-np.mean(np.log(probs[np.arange(batch), labels] + 1e-12)))

        d_logits = probs
        d_logits[np.arange(batch), labels] -= 1.0
        d_logits /= batch

        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        grads_w[-1] = d_logits.T @ x
        grads_b[-1] = d_logits.sum(axis=0)
        d_x = d_logits @ w_out

        d_alpha, d_gamma = [None] * len(self.alpha), [None] * len(self.alpha)
        for k in reversed(range(len(self.alpha))):
            x_in, w_bin, centered, std, x_hat, z = cache[k]
            # straight-through: pass the gradient where |z| <= 1
            d_z = d_x * (np.abs(z) <= 1.0)
            d_alpha[k] = (d_z * x_hat).sum(axis=0)
            d_gamma[k] = d_z.sum(axis=0)
            d_xhat = d_z * self.alpha[k]

            denom = std + eps
            safe_std = np.maximum(std, 1e-12)
            d_y = (d_xhat - d_xhat.mean(axis=0)) / denom
            d_y -= centered * ((d_xhat * centered).sum(axis=0) / (denom ** 2 * batch * safe_std))

            grads_w[k] = d_y.T @ x_in
            grads_b[k] = d_y.sum(axis=0)
            d_x = d_y @ w_bin

        lr = cfg.learning_rate
        for k in range(len(self.weights)):
            # the sign's straight-through gradient only flows where |w| <= 1
            self.weights[k] -= lr * grads_w[k] * (np.abs(self.weights[k]) <= 1.0)
            np.clip(self.weights[k], -1.0, 1.0, out=self.weights[k])
            self.biases[k] -= lr * grads_b[k]
        for k in range(len(self.alpha)):
            self.alpha[k] -= lr * d_alpha[k]
            self.gamma[k] -= lr * d_gamma[k]

        return loss

    def freeze(self, image_shape: Optional[Tuple[int, int]]) -> BnnModel:
        inner = []
        for k in range(len(self.alpha)):
            inner.append(InnerBlock(
                weights=_sign(self.weights[k]).astype(np.int64),
                bias=self.biases[k].copy(),
                bn=BatchNormParams(
                    mu=self.running_mu[k].copy(),
                    sigma=self.running_sigma[k].copy(),
                    alpha=self.alpha[k].copy(),
                    gamma=self.gamma[k].copy(),
                    epsilon=self.config.epsilon,
                ),
            ))
        output = OutputBlock(weights=_sign(self.weights[-1]).astype(np.int64), bias=self.biases[-1].copy())
        return BnnModel(inner_blocks=tuple(inner), output_block=output, image_shape=image_shape)


def train(dataset: Dataset, arch: Sequence[int], config: TrainConfig) -> BnnModel:
    arch = list(arch)
    if len(arch) < 2:
        raise InvalidInputError(f"arch needs at least input and output widths, got {arch}")
    if arch[0] != dataset.width * dataset.height:
        raise DimensionError(f"arch input {arch[0]} does not match {dataset.width}x{dataset.height} images")
    if arch[-1] != 10:
        raise DimensionError(f"arch must end in 10 classes, got {arch[-1]}")
    if len(dataset) == 0:
        raise InvalidInputError("cannot train on an empty dataset")

    rng = np.random.default_rng(config.seed)
    net = _Net(arch, rng, config)
    images = dataset.images.astype(np.float64)

    for epoch in tqdm(range(config.epochs), desc="Training", unit=" epoch", disable=None):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = net.step(images[idx], dataset.labels[idx])
            if not np.isfinite(loss):
                raise TrainingError("loss is not finite", epoch)
            losses.append(loss)
        logger.info("epoch %d: mean loss %.4f", epoch, float(np.mean(losses)))

    return net.freeze((dataset.height, dataset.width))


def evaluate(model: BnnModel, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    if dataset.images.shape[1] != model.input_width:
        raise DimensionError(f"model takes {model.input_width} inputs, images have {dataset.images.shape[1]}")
    predicted = forward_reference_batch(model, dataset.images)
    return float(np.mean(predicted == dataset.labels))


def parse_arch(text: str) -> List[int]:
    try:
        arch = [int(part) for part in text.split(",")]
    except ValueError:
        raise InvalidInputError(f"arch must be comma-separated integers, got {text!r}")
    if len(arch) < 2 or any(w < 1 for w in arch):
        raise InvalidInputError(f"arch must list at least two positive widths, got {text!r}")
    return arch
