import itertools

import numpy as np
import pytest

from model import BatchNormParams, BnnModel, InnerBlock, OutputBlock


def make_toy_model() -> BnnModel:
    """4-3-2 network whose thresholds sit well away from float boundaries."""
    inner = InnerBlock(
        weights=[[1, 1, 1, 1], [1, -1, 1, -1], [-1, -1, 1, 1]],
        bias=[0.5, -0.3, 0.0],
        bn=BatchNormParams(
            mu=[0.0, 0.2, -0.1],
            sigma=[1.0, 1.0, 0.5],
            alpha=[1.0, -1.0, 2.0],
            gamma=[0.0, 0.3, -0.4],
            epsilon=1e-5,
        ),
    )
    output = OutputBlock(weights=[[1, -1, 1], [-1, 1, 1]], bias=[0.0, 0.5])
    return BnnModel(inner_blocks=(inner,), output_block=output, image_shape=(2, 2))


def make_tie_model() -> BnnModel:
    """Two identical output rows with equal biases: class 1 can never win."""
    output = OutputBlock(weights=[[1, -1], [1, -1]], bias=[0.25, 0.25])
    return BnnModel(inner_blocks=(), output_block=output)


def make_sum_model() -> BnnModel:
    """Label 0 iff x1 + x2 >= 1, so label 1 has exactly three preimages."""
    output = OutputBlock(weights=[[1, 1], [-1, -1]], bias=[0.0, 1.0])
    return BnnModel(inner_blocks=(), output_block=output)


# label 0 preimage of the toy model, worked out by hand
TOY_LABEL0 = {(1, -1, 1, -1), (1, 1, 1, -1), (1, -1, 1, 1)}


def bipolar_inputs(width: int):
    return [tuple(x) for x in itertools.product((-1, 1), repeat=width)]


@pytest.fixture
def toy_model() -> BnnModel:
    return make_toy_model()


@pytest.fixture
def tie_model() -> BnnModel:
    return make_tie_model()


@pytest.fixture
def sum_model() -> BnnModel:
    return make_sum_model()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
