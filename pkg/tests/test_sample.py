import numpy as np
import pytest

from conftest import TOY_LABEL0, bipolar_inputs
from encode import emit_dimacs, encode_bnn
from errors import DimensionError, InvalidInputError
from model import forward_folded, forward_folded_batch
from sample import (
    InversionQuery,
    InversionStatus,
    blocking_clause,
    diversity_stats,
    enumerate_preimage,
    infer_sat,
    invert,
    novelty_stats,
)
from solve import Solver
from verify import random_model


def test_infer_matches_folded_pass(toy_model):
    formula, varmap = encode_bnn(toy_model)
    solver = Solver.from_formula(formula)
    for x in bipolar_inputs(4):
        assert infer_sat(formula, varmap, x, solver=solver, audit=True) == forward_folded(toy_model, x)[0]


def test_infer_on_constant_model(tie_model):
    formula, varmap = encode_bnn(tie_model)
    assert {infer_sat(formula, varmap, x) for x in bipolar_inputs(2)} == {0}


def test_infer_rejects_bad_inputs(toy_model):
    formula, varmap = encode_bnn(toy_model)
    with pytest.raises(DimensionError):
        infer_sat(formula, varmap, [1, 1])
    with pytest.raises(InvalidInputError):
        infer_sat(formula, varmap, [1, 1, 0, 1])


def test_blocking_clause(toy_model):
    _, varmap = encode_bnn(toy_model)
    assert blocking_clause(varmap, (1, -1, -1, 1)) == [-1, 2, 3, -4]


def test_diversity_stats():
    assert diversity_stats([(1, -1), (1, -1)]) == (1, 0.0)
    assert diversity_stats([(1, 1), (-1, -1)]) == (2, 2.0)
    assert diversity_stats([(1, 1, 1)]) == (1, 0.0)
    assert diversity_stats([]) == (0, 0.0)
    distinct, mean = diversity_stats([(1, 1, 1), (1, 1, -1), (-1, -1, -1)])
    assert distinct == 3
    assert mean == pytest.approx((1 + 3 + 2) / 3)


def test_novelty_stats():
    images = np.array([[1, 1, 1, 1], [-1, -1, -1, -1]])
    assert novelty_stats([(1, 1, 1, -1), (-1, -1, 1, 1)], images) == [1, 2]
    assert novelty_stats([(1, 1, 1, 1)], np.zeros((0, 4))) == []


def test_enumerate_matches_brute_force(toy_model):
    formula, varmap = encode_bnn(toy_model)
    solver = Solver.from_formula(formula)
    everything = set(bipolar_inputs(4))
    label0 = enumerate_preimage(formula, varmap, 0, cap=100, solver=solver, audit=True)
    label1 = enumerate_preimage(formula, varmap, 1, cap=100, solver=solver, audit=True)
    assert set(label0.inputs) == TOY_LABEL0
    assert set(label1.inputs) == everything - TOY_LABEL0
    assert len(label1.inputs) == len(set(label1.inputs))
    assert not label0.truncated and not label1.truncated


def test_enumerate_empty_preimage(tie_model):
    formula, varmap = encode_bnn(tie_model)
    enum = enumerate_preimage(formula, varmap, 1, cap=10)
    assert enum.unsat
    assert enum.inputs == []


def test_enumerate_truncation_is_flagged(toy_model):
    formula, varmap = encode_bnn(toy_model)
    enum = enumerate_preimage(formula, varmap, 0, cap=1)
    assert len(enum.inputs) == 1 and enum.truncated
    exact = enumerate_preimage(formula, varmap, 0, cap=3)
    assert len(exact.inputs) == 3 and not exact.truncated


def test_enumerate_bad_arguments(toy_model):
    formula, varmap = encode_bnn(toy_model)
    with pytest.raises(InvalidInputError):
        enumerate_preimage(formula, varmap, 0, cap=0)
    with pytest.raises(InvalidInputError):
        enumerate_preimage(formula, varmap, 2, cap=5)


def test_invert_returns_verified_samples(toy_model):
    formula, varmap = encode_bnn(toy_model)
    report = invert(formula, varmap, InversionQuery(1, num_samples=6, seed=3), model=toy_model, audit=True)
    assert report.status is InversionStatus.SATISFIABLE
    assert len(report.inputs) == 6
    assert report.all_verified
    assert report.distinct_count == 6
    assert report.mean_pairwise_hamming > 0
    assert not report.exhausted
    assert all(forward_folded(toy_model, x)[0] == 1 for x in report.inputs)


def test_invert_without_model_verifies_through_cnf(toy_model):
    formula, varmap = encode_bnn(toy_model)
    report = invert(formula, varmap, InversionQuery(1, num_samples=4, seed=0), audit=True)
    assert report.verified == [True] * 4
    assert report.solver_stats.decisions > 0


def test_invert_exhausts_small_preimage(sum_model):
    formula, varmap = encode_bnn(sum_model)
    report = invert(formula, varmap, InversionQuery(1, num_samples=10, seed=1), model=sum_model)
    assert report.status is InversionStatus.SATISFIABLE
    assert set(report.inputs) == {(-1, -1), (1, -1), (-1, 1)}
    assert len(report.inputs) == 3
    assert report.exhausted


def test_invert_non_distinct_may_repeat(sum_model):
    formula, varmap = encode_bnn(sum_model)
    report = invert(formula, varmap, InversionQuery(0, num_samples=5, distinct=False), model=sum_model)
    assert report.inputs == [(1, 1)] * 5
    assert report.distinct_count == 1
    assert report.all_verified


def test_invert_unreachable_label(tie_model):
    formula, varmap = encode_bnn(tie_model)
    report = invert(formula, varmap, InversionQuery(1, num_samples=5), model=tie_model)
    assert report.status is InversionStatus.UNSAT_LABEL
    assert report.inputs == []
    assert report.to_dict()["status"] == "UnsatLabel"


def test_invert_is_reproducible(toy_model):
    formula, varmap = encode_bnn(toy_model)
    query = InversionQuery(1, num_samples=5, seed=42)
    assert invert(formula, varmap, query).inputs == invert(formula, varmap, query).inputs


def test_invert_reports_novelty(toy_model):
    formula, varmap = encode_bnn(toy_model)
    images = np.array([[1, 1, 1, 1]])
    report = invert(formula, varmap, InversionQuery(0, num_samples=3), model=toy_model, reference_images=images)
    assert len(report.min_train_hamming) == 3
    assert sorted(report.min_train_hamming) == sorted(sum(v == -1 for v in x) for x in report.inputs)


def test_invert_checks_query(toy_model):
    formula, varmap = encode_bnn(toy_model)
    with pytest.raises(InvalidInputError):
        invert(formula, varmap, InversionQuery(2))
    with pytest.raises(InvalidInputError):
        invert(formula, varmap, InversionQuery(0, num_samples=0))


def test_invert_under_a_tiny_budget_is_unknown_or_sat(toy_model):
    formula, varmap = encode_bnn(toy_model)
    report = invert(formula, varmap, InversionQuery(1, num_samples=3), solver_options={"max_conflicts": 1})
    assert report.status in (InversionStatus.UNKNOWN, InversionStatus.SATISFIABLE)
    assert report.status is not InversionStatus.UNSAT_LABEL


@pytest.mark.slow
def test_invert_mnist_sized_model():
    rng = np.random.default_rng(2)
    model = random_model(rng, [100, 20, 10])
    labels, _ = forward_folded_batch(model, rng.choice(np.array([-1, 1]), size=(1000, 100)))
    label = 2 if 2 in labels else int(np.bincount(labels).argmax())

    formula, varmap = encode_bnn(model)
    assert emit_dimacs(formula) == emit_dimacs(encode_bnn(model)[0])
    report = invert(formula, varmap, InversionQuery(label, num_samples=100, seed=0), model=model, audit=True)
    assert report.status is InversionStatus.SATISFIABLE
    assert len(report.inputs) == 100
    assert report.verified == [True] * 100
    assert report.distinct_count >= 90
