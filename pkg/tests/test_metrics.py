import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbmtl.errors import ComparisonError, ContractError
from dbmtl.metrics import (MetricsReport, aggregate, auc, bayes_optimal_metrics, build_report,
                           evaluate_model, log_loss, mse)
from dbmtl.models import ModelConfig, build_model, targets_from_schema
from dbmtl.data import time_split
from dbmtl.synthetic import generate_synthetic, preset
from dbmtl.training import TrainConfig, train


def brute_force_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    credit = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return credit / (len(pos) * len(neg))


def test_auc_worked_example():
    assert auc([0.9, 0.8, 0.3], [1, 0, 1]) == 0.5


def test_auc_perfect_and_degenerate():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3, 0.2], [1, 1], with_flag=True) == (0.5, True)
    assert auc([0.3, 0.2], [0, 0], with_flag=True) == (0.5, True)
    assert auc([0.5, 0.5, 0.5], [0, 1, 0], with_flag=True) == (0.5, True)
    assert auc([0.4, 0.6], [0, 1], with_flag=True) == (1.0, False)


def test_auc_length_mismatch():
    with pytest.raises(ContractError):
        auc([0.1, 0.2], [1])


def test_auc_matches_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(60):
        n = int(rng.integers(2, 400))
        scores = rng.integers(0, 12, n) / 11.0   # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            continue
        assert auc(scores, labels) == brute_force_auc(scores.tolist(), labels.tolist())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(0, 1)), min_size=2, max_size=80))
def test_auc_invariant_under_increasing_transform(pairs):
    # grid scores keep the transform strictly increasing in floating point
    scores = np.array([p[0] / 10 for p in pairs])
    labels = np.array([p[1] for p in pairs])
    assert auc(scores, labels) == auc(np.exp(scores) * 3 + 1, labels)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=80), st.integers(0, 10_000))
def test_auc_negation_complements(labels, seed):
    labels = np.array(labels)
    scores = np.random.default_rng(seed).permutation(len(labels)).astype(float)
    value, degenerate = auc(scores, labels, with_flag=True)
    if not degenerate:
        assert value + auc(-scores, labels) == pytest.approx(1.0, abs=1e-15)


def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([0.0, 2.0], [1.0, 1.0]) == 1.0
    with pytest.raises(ContractError):
        mse([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-800, 800), st.integers(-800, 800)), min_size=1,
                max_size=30), st.integers(-800, 800))
def test_mse_translation_invariant_and_nonnegative(pairs, c):
    p = np.array([a / 8 for a, _ in pairs])
    y = np.array([b / 8 for _, b in pairs])
    c = c / 8
    assert mse(p, y) >= 0
    assert mse(p + c, y + c) == pytest.approx(mse(p, y), rel=1e-9, abs=1e-9)
    assert (mse(p, y) == 0) == bool(np.all(p == y))


def test_log_loss_value():
    assert log_loss([0.5, 0.5], [0, 1]) == pytest.approx(np.log(2))


def test_oracle_mse_equals_mean_conditional_variance():
    ds = generate_synthetic(preset("live6"), 100_000, 8)
    report = bayes_optimal_metrics(ds)
    # law of total variance: E[(y - E[y|x])^2] = E[Var(y|x)]
    assert report.value("ast") == pytest.approx(ds.ground_truth["variance/ast"].mean(), rel=0.02)


def test_oracle_needs_ground_truth():
    ds = generate_synthetic(preset("pair"), 100, 0)
    bare = ds.subset(np.arange(len(ds)))
    object.__setattr__(bare, "ground_truth", None)
    with pytest.raises(ContractError):
        bayes_optimal_metrics(bare)


def test_oracle_dominates_trained_models():
    ds = generate_synthetic(preset("pair"), 20_000, 2)
    tr, va, te = time_split(ds, 0.8)
    oracle = bayes_optimal_metrics(te)
    cfg = ModelConfig("vanilla", targets_from_schema(ds.schema), shared_layers=(16,),
                      specific_layers=(8,), bayes_layers=(8,), embedding_dim=4)
    for seed in range(5):
        model, _ = train(build_model(cfg, ds.schema, seed), tr, va,
                         TrainConfig(epochs=3, batch_size=500, seed=seed))
        report = evaluate_model(model, te)
        for t in ("t1", "t2"):
            assert oracle.value(t) >= report.value(t) - 0.005


def _report(name, value, fp="f", kind="auc"):
    return MetricsReport("vanilla", [], {"y": {"kind": kind, "value": value}}, fp, [0],
                         name=name)


def test_build_report_single_row():
    table = build_report([_report("a", 0.7)])
    assert len(table.rows) == 1


def test_build_report_sorted_and_consistent():
    table = build_report([_report("a", 0.6), _report("b", 0.8), _report("c", 0.7)])
    assert [r.name for r in table.rows] == ["b", "c", "a"]
    doc = json.loads(table.dumps())
    text = table.to_text().splitlines()
    for row, line in zip(doc["rows"], text[1:]):
        assert line.split()[0] == row["name"]
        assert float(line.split()[-1]) == row["metrics"]["y"]["value"]


def test_build_report_mse_ascending():
    rows = [_report("a", 0.5, kind="mse"), _report("b", 0.2, kind="mse")]
    assert [r.name for r in build_report(rows).rows] == ["b", "a"]


def test_build_report_fingerprint_mismatch():
    with pytest.raises(ComparisonError):
        build_report([_report("a", 0.6, "x"), _report("b", 0.7, "y")])


def test_aggregate_mean_and_range():
    agg = aggregate([_report("a", 0.6), _report("a", 0.8)])
    m = agg.metrics["y"]
    assert m["value"] == pytest.approx(0.7)
    assert (m["min"], m["max"]) == (0.6, 0.8)
    with pytest.raises(ComparisonError):
        aggregate([_report("a", 0.6, "x"), _report("a", 0.7, "y")])


def test_report_json_round_trip():
    r = _report("a", 0.61)
    assert MetricsReport.from_json(json.loads(json.dumps(r.to_json()))) == r


def test_fingerprint_stable_across_rereads(tmp_path):
    from dbmtl.data import load_csv, write_csv
    ds = generate_synthetic(preset("pair"), 200, 1)
    write_csv(ds, tmp_path / "d.csv")
    a = load_csv(tmp_path / "d.csv", ds.schema).fingerprint()
    b = load_csv(tmp_path / "d.csv", ds.schema).fingerprint()
    assert a == b == ds.fingerprint()
