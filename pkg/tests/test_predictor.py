import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from llmroute.predictor import (
    DEFAULT_SCHEME,
    STATE_SCHEME,
    BucketScheme,
    EmpiricalPredictor,
    OraclePredictor,
    SimulatedPredictor,
    annotate,
    bucket_of,
    default_accuracy_table,
    evaluate_predictor,
    fit_empirical,
    predict_empirical,
    predict_simulated,
)
from llmroute.workload import TABLE1, Request, generate_mixture


def test_bucket_edges():
    assert [bucket_of(DEFAULT_SCHEME, d) for d in (0, 249, 250, 999, 1000, 3999, 4000, 9000)] == [0, 0, 1, 1, 2, 2, 3, 3]
    assert [bucket_of(STATE_SCHEME, d) for d in (255, 256, 2047, 2048)] == [0, 1, 1, 2]


def test_upper_bounds():
    assert [DEFAULT_SCHEME.upper_bound(b) for b in range(4)] == [250, 1000, 4000, 4096]


def test_scheme_validation():
    with pytest.raises(ValueError):
        BucketScheme((5, 10))
    with pytest.raises(ValueError):
        BucketScheme((0, 10, 10))
    with pytest.raises(ValueError):
        bucket_of(DEFAULT_SCHEME, -1)


@given(st.integers(0, 3), st.integers(0, 2**31))
def test_simulated_errors_are_adjacent(true_b, seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        b = predict_simulated(true_b, "t", {"t": 0.0}, rng, 4)
        assert abs(b - true_b) == 1 and 0 <= b < 4


def test_simulated_perfect_accuracy():
    rng = np.random.default_rng(0)
    assert all(predict_simulated(2, "t", {"t": 1.0}, rng) == 2 for _ in range(100))


def test_simulated_accuracy_validation():
    with pytest.raises(ValueError):
        predict_simulated(0, "t", {"t": 1.5}, np.random.default_rng(0))


def test_simulated_predictor_reproduces_table_accuracies():
    trace = generate_mixture(100_000, 50.0, np.random.default_rng(0))
    report = evaluate_predictor(SimulatedPredictor(seed=1), trace.requests)
    table = default_accuracy_table()
    for task, acc in report.per_task.items():
        assert abs(acc - table[task]) <= 0.01, task


def test_empirical_task_feature_beats_task_blind():
    train = generate_mixture(20_000, 50.0, np.random.default_rng(1)).requests
    test = generate_mixture(20_000, 50.0, np.random.default_rng(2)).requests
    with_task = evaluate_predictor(EmpiricalPredictor(fit_empirical(train)), test).overall
    blind = evaluate_predictor(EmpiricalPredictor(fit_empirical(train, use_task=False)), test).overall
    assert with_task > blind


def test_empirical_fallbacks():
    reqs = [Request(i, "a", 10, 100) for i in range(5)] + [Request(9, "b", 600, 2000)]
    model = fit_empirical(reqs)
    assert predict_empirical(model, "a", 10) == 0
    assert predict_empirical(model, "a", 700) == 0  # unseen band: task marginal
    assert predict_empirical(model, "zzz", 10) == 0  # unseen task: global marginal
    assert predict_empirical(model, "b", 700) == 2


def test_empirical_ties_take_first_bucket():
    reqs = [Request(0, "a", 10, 100), Request(1, "a", 10, 2000)]
    assert predict_empirical(fit_empirical(reqs), "a", 10) == 0


def test_empirical_needs_data():
    with pytest.raises(ValueError):
        fit_empirical([])


def test_oracle_and_evaluate():
    reqs = generate_mixture(500, 5.0, np.random.default_rng(0)).requests
    rep = evaluate_predictor(OraclePredictor(), reqs)
    assert rep.overall == 1.0 and sum(rep.counts.values()) == 500
    with pytest.raises(ValueError):
        evaluate_predictor(OraclePredictor(), [])


def test_annotate_sets_upper_bound():
    reqs = [Request(0, "x", 5, 300), Request(1, "x", 5, 5000)]
    annotate(reqs, OraclePredictor())
    assert [(r.predicted_bucket, r.predicted_decode_tokens) for r in reqs] == [(1, 1000), (3, 4096)]


def test_default_table_matches_rows():
    table = default_accuracy_table()
    assert table == {k.value: row[4] for k, row in TABLE1.items()}
