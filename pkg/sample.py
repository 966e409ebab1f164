# sample.py
"""
Inference, inversion, preimage enumeration and diversity statistics on top of
the CNF encoding.

    inference:  BNN(X, H, Y) and I(X = x)   -> read the true output indicator
    inversion:  BNN(X, H, Y) and O(Y = y)   -> read the input variables
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from encode import CnfFormula, VariableMap
from errors import DimensionError, EncodingError, InvalidInputError
from model import BnnModel, forward_folded
from solve import Solver, SolveOutcome, SolverStats, Status, check_model

logger = logging.getLogger(__name__)

Bipolar = Tuple[int, ...]


class InversionStatus(str, Enum):
    SATISFIABLE = "Satisfiable"
    UNSAT_LABEL = "UnsatLabel"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class InversionQuery:
    target_label: int
    num_samples: int = 100
    seed: int = 0
    distinct: bool = True

    def check(self, classes: int):
        if not 0 <= self.target_label < classes:
            raise InvalidInputError(f"label {self.target_label} outside 0..{classes - 1}")
        if self.num_samples < 1:
            raise InvalidInputError("num_samples must be >= 1")


@dataclass
class InversionReport:
    status: InversionStatus
    target_label: int
    inputs: List[Bipolar] = field(default_factory=list)
    verified: List[bool] = field(default_factory=list)
    distinct_count: int = 0
    mean_pairwise_hamming: float = 0.0
    exhausted: bool = False  # every distinct preimage was returned
    min_train_hamming: Optional[List[int]] = None
    solver_stats: SolverStats = field(default_factory=SolverStats)

    @property
    def all_verified(self) -> bool:
        return all(self.verified)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "target_label": self.target_label,
            "samples": len(self.inputs),
            "inputs": [list(x) for x in self.inputs],
            "verified": self.verified,
            "all_verified": self.all_verified,
            "distinct_count": self.distinct_count,
            "mean_pairwise_hamming": self.mean_pairwise_hamming,
            "exhausted": self.exhausted,
            "min_train_hamming": self.min_train_hamming,
            "solver_stats": dict(self.solver_stats.__dict__),
        }


@dataclass
class PreimageEnumeration:
    label: int
    inputs: List[Bipolar]
    truncated: bool

    @property
    def unsat(self) -> bool:
        return not self.inputs


def _solver(formula: CnfFormula, solver: Optional[Solver]) -> Solver:
    return solver if solver is not None else Solver.from_formula(formula)


def _audit(outcome: SolveOutcome, formula: CnfFormula):
    if not check_model(formula.clauses, outcome.model):
        raise EncodingError("solver returned an assignment that violates the formula")


def _label_of(outcome: SolveOutcome, varmap: VariableMap) -> int:
    labels = varmap.labels_in(outcome.model)
    if len(labels) != 1:
        raise EncodingError(f"expected exactly one true output indicator, got {labels}")
    return labels[0]


def infer_sat(formula: CnfFormula, varmap: VariableMap, x: Sequence[int],
              solver: Optional[Solver] = None, audit: bool = False) -> int:
    if len(x) != len(varmap.input_vars):
        raise DimensionError(f"expected {len(varmap.input_vars)} inputs, got {len(x)}")
    if any(v not in (-1, 1) for v in x):
        raise InvalidInputError("inputs must be bipolar (-1 or +1)")

    solver = _solver(formula, solver)
    outcome = solver.solve(varmap.input_assumptions(x))
    if outcome.status is not Status.SAT:
        raise EncodingError(f"inference query returned {outcome.status.value} for input {list(x)}")
    if audit:
        _audit(outcome, formula)
    return _label_of(outcome, varmap)


def blocking_clause(varmap: VariableMap, x: Sequence[int]) -> List[int]:
    """Clause excluding exactly the input assignment x (hidden and aux vars stay free)."""
    return [-lit for lit in varmap.input_assumptions(x)]


def diversity_stats(inputs: Sequence[Sequence[int]]) -> Tuple[int, float]:
    if not inputs:
        return 0, 0.0
    xs = np.asarray(inputs, dtype=np.int64)
    if xs.ndim != 2:
        raise DimensionError("inputs must all have the same length")
    distinct = len({tuple(row) for row in xs.tolist()})
    m, n = xs.shape
    if m < 2:
        return distinct, 0.0
    # for bipolar vectors hamming(a, b) = (n - <a, b>) / 2
    hamming = (n - xs @ xs.T) // 2
    upper = hamming[np.triu_indices(m, k=1)]
    return distinct, float(upper.mean())


def novelty_stats(inputs: Sequence[Sequence[int]], images: np.ndarray) -> List[int]:
    """Hamming distance from each input to its nearest reference image."""
    if len(images) == 0:
        return []
    refs = np.asarray(images, dtype=np.int64)
    out = []
    for x in inputs:
        x = np.asarray(x, dtype=np.int64)
        out.append(int(((refs.shape[1] - refs @ x) // 2).min()))
    return out


def _verify_inputs(inputs: List[Bipolar], label: int, model: Optional[BnnModel],
                   formula: CnfFormula, varmap: VariableMap, audit: bool = False) -> List[bool]:
    if model is not None:
        return [forward_folded(model, x)[0] == label for x in inputs]
    # no model at hand: re-run inference on a separate instance
    checker = Solver.from_formula(formula)
    return [infer_sat(formula, varmap, x, solver=checker, audit=audit) == label for x in inputs]


def _sample_seeds(seed: int, count: int) -> List[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2 ** 31 - 1, size=count)]


def invert(formula: CnfFormula, varmap: VariableMap, query: InversionQuery,
           model: Optional[BnnModel] = None, reference_images: Optional[np.ndarray] = None,
           solver_options: Optional[Dict[str, Any]] = None, audit: bool = False) -> InversionReport:
    query.check(varmap.classes)
    solver = Solver.from_formula(formula, **(solver_options or {}))
    solver.add_clause([varmap.output_vars[query.target_label]])

    inputs: List[Bipolar] = []
    status = InversionStatus.SATISFIABLE
    exhausted = False
    for seed in tqdm(_sample_seeds(query.seed, query.num_samples), desc=f"Inverting label {query.target_label}",
                     unit=" sample", disable=None):
        outcome = solver.solve_randomized(seed=seed)
        if outcome.status is Status.UNSAT:
            exhausted = True
            break
        if outcome.status is Status.UNKNOWN:
            status = InversionStatus.UNKNOWN
            break
        if audit:
            _audit(outcome, formula)
        x = varmap.project_inputs(outcome.model)
        inputs.append(x)
        if query.distinct:
            solver.add_clause(blocking_clause(varmap, x))

    if not inputs and exhausted:
        status = InversionStatus.UNSAT_LABEL
        logger.info("label %d is unreachable: inversion query is Unsat", query.target_label)

    distinct, mean_hamming = diversity_stats(inputs)
    report = InversionReport(
        status=status,
        target_label=query.target_label,
        inputs=inputs,
        verified=_verify_inputs(inputs, query.target_label, model, formula, varmap, audit),
        distinct_count=distinct,
        mean_pairwise_hamming=mean_hamming,
        exhausted=exhausted,
        solver_stats=SolverStats(**solver.stats.__dict__),
    )
    if reference_images is not None:
        report.min_train_hamming = novelty_stats(inputs, reference_images)
    if not report.all_verified:
        logger.error("%d inverted inputs failed re-verification", report.verified.count(False))
    return report


def enumerate_preimage(formula: CnfFormula, varmap: VariableMap, label: int, cap: int,
                       solver: Optional[Solver] = None, audit: bool = False) -> PreimageEnumeration:
    """Every input mapped to `label`, found by blocking on the input variables only."""
    if cap < 1:
        raise InvalidInputError("cap must be >= 1")
    if not 0 <= label < varmap.classes:
        raise InvalidInputError(f"label {label} outside 0..{varmap.classes - 1}")

    solver = _solver(formula, solver)
    target = varmap.output_vars[label]
    inputs: List[Bipolar] = []
    truncated = False
    while True:
        outcome = solver.solve([target])
        if outcome.status is Status.UNKNOWN:
            raise EncodingError("enumeration hit the solver's resource limit")
        if outcome.status is Status.UNSAT:
            break
        if len(inputs) == cap:
            truncated = True
            break
        if audit:
            _audit(outcome, formula)
        x = varmap.project_inputs(outcome.model)
        inputs.append(x)
        solver.add_clause([-target] + blocking_clause(varmap, x))

    if truncated:
        logger.warning("preimage of label %d truncated at %d inputs", label, cap)
    return PreimageEnumeration(label=label, inputs=inputs, truncated=truncated)
