# verify.py
"""
Oracles and equivalence harnesses for the encoder, the solver and inversion.

Ground truth is always `forward_folded`; the real-valued pass can differ from
it on thresholds that sit on a float boundary, and that divergence is
reported separately.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from tqdm import tqdm

from encode import CnfFormula, VariableMap, encode_bnn
from errors import BudgetError, EncodingError, InvalidInputError
from model import (
    BatchNormParams,
    BnnModel,
    InnerBlock,
    OutputBlock,
    boundary_divergence,
    forward_folded,
    forward_folded_batch,
)
from sample import InversionQuery, InversionStatus, enumerate_preimage, infer_sat, invert
from solve import Solver

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 25
EXHAUSTIVE_LIMIT = 16
CHUNK_BITS = 16

Bipolar = Tuple[int, ...]
InputSpec = Union[str, Tuple[str, int, int]]


@dataclass
class Mismatch:
    input: Bipolar
    expected_label: Optional[int]
    got_label: Optional[int]


@dataclass
class EquivalenceReport:
    total_checked: int = 0
    mismatches: List[Mismatch] = field(default_factory=list)
    divergence: Optional[int] = None  # forward_reference vs forward_folded, informational

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def merge(self, other: "EquivalenceReport") -> "EquivalenceReport":
        return EquivalenceReport(
            total_checked=self.total_checked + other.total_checked,
            mismatches=self.mismatches + other.mismatches,
            divergence=self.divergence if other.divergence is None else other.divergence,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total_checked": self.total_checked,
            "pass": self.passed,
            "mismatches": [
                {"input": list(m.input), "expected_label": m.expected_label, "got_label": m.got_label}
                for m in self.mismatches
            ],
            "reference_divergence": self.divergence,
        }


def all_inputs(width: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Bipolar inputs for indices start..stop; bit p of the index set means x_p = +1."""
    stop = 2 ** width if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(width, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(np.int64)


def _chunks(width: int) -> Iterator[np.ndarray]:
    total = 2 ** width
    step = 2 ** CHUNK_BITS
    for start in range(0, total, step):
        yield all_inputs(width, start, min(total, start + step))


def _check_budget(model: BnnModel, limit: int):
    if model.input_width > limit:
        raise BudgetError(f"input width {model.input_width} exceeds the enumeration budget of {limit}")


def brute_force_preimage(model: BnnModel, label: int, limit: int = BRUTE_FORCE_LIMIT) -> Set[Bipolar]:
    _check_budget(model, limit)
    if not 0 <= label < model.classes:
        raise InvalidInputError(f"label {label} outside 0..{model.classes - 1}")
    found: Set[Bipolar] = set()
    chunks = _chunks(model.input_width)
    total = max(1, 2 ** (model.input_width - CHUNK_BITS))
    for xs in tqdm(chunks, total=total, desc="Brute force", unit=" chunk", disable=None):
        labels, _ = forward_folded_batch(model, xs)
        found.update(map(tuple, xs[labels == label].tolist()))
    return found


def label_counts(model: BnnModel, limit: int = BRUTE_FORCE_LIMIT) -> np.ndarray:
    """Preimage size of every label, by exhaustive folded evaluation."""
    _check_budget(model, limit)
    counts = np.zeros(model.classes, dtype=np.int64)
    for xs in _chunks(model.input_width):
        labels, _ = forward_folded_batch(model, xs)
        counts += np.bincount(labels, minlength=model.classes)
    return counts


def _input_stream(model: BnnModel, inputs: InputSpec, exhaustive_limit: int) -> Tuple[np.ndarray, str]:
    width = model.input_width
    if inputs == "exhaustive" or width <= exhaustive_limit:
        if inputs != "exhaustive":
            logger.info("width %d is small enough: checking exhaustively", width)
        _check_budget(model, BRUTE_FORCE_LIMIT)
        return all_inputs(width), "exhaustive"
    mode, count, seed = inputs
    if mode != "random":
        raise InvalidInputError(f"unknown input mode {mode!r}")
    rng = np.random.default_rng(seed)
    return rng.choice(np.array([-1, 1]), size=(count, width)), "random"


def check_inference_equivalence(model: BnnModel, formula: CnfFormula, varmap: VariableMap,
                                inputs: InputSpec = "exhaustive",
                                exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> EquivalenceReport:
    xs, mode = _input_stream(model, inputs, exhaustive_limit)
    expected, _ = forward_folded_batch(model, xs)
    solver = Solver.from_formula(formula)

    report = EquivalenceReport(total_checked=len(xs))
    for x, want in tqdm(zip(xs.tolist(), expected.tolist()), total=len(xs),
                        desc=f"Inference ({mode})", unit=" input", disable=None):
        try:
            got = infer_sat(formula, varmap, x, solver=solver, audit=True)
        except EncodingError as e:
            logger.error("%s", e)
            got = None
        if got != want:
            report.mismatches.append(Mismatch(tuple(x), want, got))
    report.divergence = boundary_divergence(model, xs)
    return report


def check_inversion(model: BnnModel, formula: CnfFormula, varmap: VariableMap,
                    limit: int = EXHAUSTIVE_LIMIT) -> EquivalenceReport:
    _check_budget(model, limit)
    everything = all_inputs(model.input_width)
    labels, _ = forward_folded_batch(model, everything)
    oracle: Dict[int, Set[Bipolar]] = {c: set() for c in range(model.classes)}
    for x, c in zip(map(tuple, everything.tolist()), labels.tolist()):
        oracle[c].add(x)

    solver = Solver.from_formula(formula)
    report = EquivalenceReport()
    for label in range(model.classes):
        try:
            found = set(enumerate_preimage(formula, varmap, label, cap=2 ** model.input_width,
                                           solver=solver, audit=True).inputs)
        except EncodingError as e:
            logger.error("label %d: %s", label, e)
            report.mismatches.append(Mismatch((), label, None))
            continue
        report.total_checked += len(found | oracle[label])
        for x in sorted(found - oracle[label]):
            report.mismatches.append(Mismatch(x, forward_folded(model, x)[0], label))
        for x in sorted(oracle[label] - found):
            report.mismatches.append(Mismatch(x, label, None))

        try:
            verdict = invert(formula, varmap, InversionQuery(label, num_samples=1, seed=label),
                             model=model, audit=True)
        except EncodingError as e:
            logger.error("label %d: %s", label, e)
            report.mismatches.append(Mismatch((), label, None))
            continue
        unsat = verdict.status is InversionStatus.UNSAT_LABEL
        if unsat != (not oracle[label]):
            logger.error("label %d: inversion says unsat=%s, oracle preimage has %d inputs",
                         label, unsat, len(oracle[label]))
            report.mismatches.append(Mismatch((), label if oracle[label] else None,
                                              None if unsat else label))
    return report


# Random models for the oracle suite

def _near_integer(rng: np.random.Generator, size: int, spread: int) -> np.ndarray:
    base = rng.integers(-spread, spread + 1, size=size).astype(np.float64)
    offsets = rng.choice(np.array([0.0, 1e-3, -1e-3, 0.5, 0.25, -0.75]), size=size)
    return base + offsets


def random_model(rng: np.random.Generator, arch: Sequence[int]) -> BnnModel:
    """Random BNN with alpha of every sign (exact zeros included) and biases close to integers."""
    arch = list(arch)
    inner = []
    for k in range(len(arch) - 2):
        rows, cols = arch[k + 1], arch[k]
        alpha = rng.choice(np.array([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0]), size=rows)
        inner.append(InnerBlock(
            weights=rng.choice(np.array([-1, 1]), size=(rows, cols)),
            bias=_near_integer(rng, rows, 2),
            bn=BatchNormParams(
                mu=_near_integer(rng, rows, 2),
                sigma=rng.choice(np.array([0.0, 0.5, 1.0, 2.0]), size=rows),
                alpha=alpha,
                gamma=rng.normal(0.0, 1.0, size=rows),
                epsilon=1e-5,
            ),
        ))
    output = OutputBlock(
        weights=rng.choice(np.array([-1, 1]), size=(arch[-1], arch[-2])),
        bias=_near_integer(rng, arch[-1], 2),
    )
    return BnnModel(inner_blocks=tuple(inner), output_block=output)


def random_arch(rng: np.random.Generator, max_width: int = 10, max_blocks: int = 3,
                max_hidden: int = 6, max_classes: int = 4) -> List[int]:
    blocks = int(rng.integers(1, max_blocks + 1))
    arch = [int(rng.integers(2, max_width + 1))]
    arch += [int(rng.integers(1, max_hidden + 1)) for _ in range(blocks)]
    arch.append(int(rng.integers(2, max_classes + 1)))
    return arch


def run_oracle_suite(count: int = 20, seed: int = 0, max_width: int = 10) -> List[EquivalenceReport]:
    """Exhaustive inference and inversion checks over `count` random models."""
    rng = np.random.default_rng(seed)
    reports = []
    for k in range(count):
        arch = random_arch(rng, max_width=max_width)
        model = random_model(rng, arch)
        formula, varmap = encode_bnn(model)
        report = check_inference_equivalence(model, formula, varmap).merge(
            check_inversion(model, formula, varmap)
        )
        logger.info("model %d %s: %d checked, pass=%s", k, arch, report.total_checked, report.passed)
        reports.append(report)
    return reports


def best_win_margin(model: BnnModel, label: int, limit: int = BRUTE_FORCE_LIMIT) -> float:
    """Largest l_label - max(other logits) over every input, under the folded hidden layers."""
    _check_budget(model, limit)
    if model.classes < 2 or not 0 <= label < model.classes:
        raise InvalidInputError(f"label {label} has no rival among {model.classes} classes")
    weights = model.output_block.weights
    bias = model.output_block.bias
    others = [c for c in range(model.classes) if c != label]
    best = -np.inf
    for xs in _chunks(model.input_width):
        _, hidden = forward_folded_batch(model, xs)
        logits = (hidden[-1] if hidden else xs) @ weights.T + bias
        best = max(best, float((logits[:, label] - logits[:, others].max(axis=1)).max()))
    return best


def sink_label(model: BnnModel, label: int, margin: float) -> BnnModel:
    """Lower the output bias of `label` so that it loses to some rival on every input."""
    bias = model.output_block.bias.copy()
    bias[label] -= margin + 0.5
    output = OutputBlock(weights=model.output_block.weights, bias=bias)
    return BnnModel(inner_blocks=model.inner_blocks, output_block=output, image_shape=model.image_shape)


def search_unreachable_model(arch: Sequence[int], seed: int = 0, tries: int = 50,
                             label: Optional[int] = None,
                             limit: int = BRUTE_FORCE_LIMIT) -> Tuple[BnnModel, int]:
    """
    Random weight search for a model that never outputs some label (or `label`).

    Wide hidden layers rarely leave a label unreachable by chance. When every
    try fails, the rarest (or requested) label of the last model is pushed
    just past its best winning margin instead.
    """
    if tries < 1:
        raise InvalidInputError("tries must be >= 1")
    rng = np.random.default_rng(seed)
    for attempt in range(tries):
        model = random_model(rng, arch)
        counts = label_counts(model, limit)
        missing = [c for c in range(model.classes) if counts[c] == 0]
        if label is not None:
            missing = [c for c in missing if c == label]
        if missing:
            logger.info("attempt %d: label %d is unreachable", attempt, missing[0])
            return model, missing[0]

    target = label if label is not None else int(np.argmin(counts))
    margin = best_win_margin(model, target, limit)
    sunk = sink_label(model, target, margin)
    if label_counts(sunk, limit)[target] != 0:
        raise InvalidInputError(f"could not make label {target} unreachable after {tries} tries")
    logger.info("label %d made unreachable by lowering its bias by %.3f", target, margin + 0.5)
    return sunk, target
