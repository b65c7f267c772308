import math

import numpy as np
import pytest

from dbmtl.data import Dataset, FeatureSchema, LabelSpec, time_split
from dbmtl.errors import ConfigurationError, ContractError, StructureError
from dbmtl.models import ModelConfig, TargetSpec, targets_from_schema
from dbmtl.search import (CandidateEvaluator, SearchBudget, binary_entropy, entropy_ranking,
                          greedy_search, heuristic_initial_structure, local_variation_search,
                          score_structure)
from dbmtl.structure import validate_structure
from dbmtl.synthetic import generate_synthetic, preset
from dbmtl.training import TrainConfig

TINY = dict(embedding_dim=2, shared_layers=(4,), specific_layers=(3,), bayes_layers=(2,))
FAST = SearchBudget(max_candidates=50, epochs=1, seeds=1, patience=1)


@pytest.fixture(scope="module")
def live():
    ds = generate_synthetic(preset("live6"), 1500, 0)
    tr, va, _ = time_split(ds, 0.8)
    return tr, va


def _config(schema, names):
    specs = tuple(t for t in targets_from_schema(schema) if t.name in names)
    return ModelConfig("dbmtl", specs, **TINY)


class CountingEvaluator(CandidateEvaluator):
    """Replaces training with a deterministic fake score."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.calls = []
        self.requests = 0

    def evaluate_many(self, structures):
        from dbmtl.search import StructureCandidate
        self.requests += len(structures)
        out = []
        for s in structures:
            k = self.key(s)
            if k not in self.cache:
                if self.remaining <= 0:
                    out.append(None)
                    continue
                self.calls.append(s)
                self.trained += 1
                self.cache[k] = StructureCandidate(s, -len(s.edges) + 0.01 * len(self.calls))
            out.append(self.cache[k])
        return out


def test_binary_entropy_values():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0 == binary_entropy(1.0)
    assert round(binary_entropy(0.1), 5) == 0.46900
    np.testing.assert_allclose(binary_entropy(np.array([0.2, 0.8])), binary_entropy(0.2))
    with pytest.raises(ContractError):
        binary_entropy(1.5)


@pytest.mark.parametrize("n, limit", [(2, 3), (3, 9), (4, 18), (6, 45)])
def test_greedy_training_count_bound(live, n, limit):
    tr, va = live
    names = tr.schema.label_names[:n]
    cfg = _config(tr.schema, names)
    ev = CountingEvaluator(cfg, tr, va, TrainConfig(), FAST)
    greedy_search(cfg, (tr, va), node_order=names, evaluator=ev)
    assert ev.trained <= limit
    if n == 2:
        assert ev.trained == 3


def test_greedy_real_training_two_targets(live):
    tr, va = live
    cfg = _config(tr.schema, ["ctr", "cgr"])
    ev = CandidateEvaluator(cfg, tr, va, TrainConfig(batch_size=500), FAST)
    best = greedy_search(cfg, (tr, va), node_order=["ctr", "cgr"], evaluator=ev)
    assert ev.trained == 3
    assert best.score == min(c.score for c in ev.candidates())
    assert not best.truncated


def test_greedy_node_order_must_be_permutation(live):
    tr, va = live
    cfg = _config(tr.schema, ["ctr", "cgr", "cfr"])
    with pytest.raises(ContractError):
        greedy_search(cfg, (tr, va), node_order=["ctr", "cgr"], budget=FAST)


def test_greedy_budget_truncates(live):
    tr, va = live
    names = ["ctr", "cgr", "cfr"]
    cfg = _config(tr.schema, names)
    ev = CountingEvaluator(cfg, tr, va, TrainConfig(), SearchBudget(4, 1, 1, 1))
    best = greedy_search(cfg, (tr, va), node_order=names, evaluator=ev)
    assert best.truncated and ev.trained == 4


def test_local_search_budget_zero_returns_initial(live):
    tr, va = live
    cfg = _config(tr.schema, ["ctr", "cgr"])
    init = validate_structure(["ctr", "cgr"], [("cgr", "ctr")])
    ev = CountingEvaluator(cfg, tr, va, TrainConfig(), FAST)
    best = local_variation_search(init, cfg, (tr, va), SearchBudget(0, 1, 1, 1), evaluator=ev)
    assert best.structure == init and ev.trained == 1


def test_local_search_cyclic_proposals_are_free(live):
    tr, va = live
    names = ["ctr", "cgr", "cfr"]
    cfg = _config(tr.schema, names)
    # a chain: adding the closing edge cfr->ctr would form a cycle
    init = validate_structure(names, [("ctr", "cgr"), ("cgr", "cfr")])
    ev = CountingEvaluator(cfg, tr, va, TrainConfig(), SearchBudget(200, 1, 1, 1))
    local_variation_search(init, cfg, (tr, va), SearchBudget(6, 1, 1, 1), rng=0, evaluator=ev)
    # every one of the six iterations reached the evaluator with an acyclic proposal
    assert ev.requests == 1 + 6
    assert ev.trained <= 1 + 6


def test_local_search_accepts_only_strict_improvement(live):
    tr, va = live
    names = ["ctr", "cgr"]
    cfg = _config(tr.schema, names)
    ev = CountingEvaluator(cfg, tr, va, TrainConfig(), SearchBudget(100, 1, 1, 1))
    best = local_variation_search(validate_structure(names, []), cfg, (tr, va),
                                  SearchBudget(10, 1, 1, 1), rng=1, evaluator=ev)
    # the fake score prefers more edges, and with two targets one edge is the most
    assert len(best.structure.edges) == 1
    assert best.score == min(c.score for c in ev.candidates())


def test_score_structure_is_deterministic(live):
    tr, va = live
    cfg = _config(tr.schema, ["ctr", "cgr"])
    s = validate_structure(["ctr", "cgr"], [("ctr", "cgr")])
    train_cfg = TrainConfig(epochs=1, batch_size=500)
    a = score_structure(s, (tr, va), cfg, train_cfg, [0, 1])
    b = score_structure(s, (tr, va), cfg, train_cfg, [0, 1])
    assert a.score == b.score and a.seed_scores == b.seed_scores
    assert math.isfinite(a.score) and a.seeds == [0, 1]
    assert a.score == pytest.approx(np.mean(a.seed_scores))


def test_score_structure_needs_positive_weight(live):
    tr, va = live
    specs = targets_from_schema(tr.schema, {"ctr": 0.0, "cgr": 0.0})
    cfg = ModelConfig("dbmtl", tuple(t for t in specs if t.name in ("ctr", "cgr")), **TINY)
    with pytest.raises(ContractError):
        score_structure(validate_structure(["ctr", "cgr"], []), (tr, va), cfg,
                        TrainConfig(epochs=1), [0])


def test_all_seeds_diverging_fails_candidate():
    rng = np.random.default_rng(0)
    schema = FeatureSchema((), ("x",), (LabelSpec("a", "continuous"), LabelSpec("b", "continuous")))
    y = rng.random(200) * 1e200
    ds = Dataset(schema, np.zeros((200, 0), int), rng.standard_normal((200, 1)),
                 {"a": y, "b": y})
    cfg = ModelConfig("dbmtl", targets_from_schema(schema), **TINY)
    cand = score_structure(validate_structure(["a", "b"], []), (ds, ds), cfg,
                           TrainConfig(epochs=1, batch_size=100), [0, 1])
    assert cand.failed and cand.failed_seeds == [0, 1]


def test_evaluator_caches(live):
    tr, va = live
    cfg = _config(tr.schema, ["ctr", "cgr"])
    ev = CandidateEvaluator(cfg, tr, va, TrainConfig(batch_size=500), FAST)
    s = validate_structure(["ctr", "cgr"], [])
    first = ev(s)
    assert ev(s) is first and ev.trained == 1


def test_budget_validation():
    with pytest.raises(ConfigurationError):
        SearchBudget(epochs=0)
    with pytest.raises(ConfigurationError):
        SearchBudget(max_candidates=-1)


def _rates_dataset(rates, n=1000):
    schema = FeatureSchema((), ("f",), tuple(LabelSpec(k) for k in rates))
    labels = {k: (np.arange(n) < round(p * n)).astype(float) for k, p in rates.items()}
    return Dataset(schema, np.zeros((n, 0), int), np.zeros((n, 1)), labels)


def test_heuristic_orients_from_higher_entropy():
    ds = _rates_dataset({"b": 0.05, "a": 0.5})
    s = heuristic_initial_structure(["b", "a"], ds, pairs=[("b", "a")])
    assert s.edges == (("a", "b"),)


def test_heuristic_tie_uses_declaration_order():
    ds = _rates_dataset({"x": 0.3, "y": 0.3})
    assert heuristic_initial_structure(["x", "y"], ds, pairs=[("y", "x")]).edges == (("x", "y"),)
    assert heuristic_initial_structure(["y", "x"], ds, pairs=[("x", "y")]).edges == (("y", "x"),)


def test_heuristic_keeps_hard_edges():
    # the gate has the lowest entropy but its edge is kept
    ds = _rates_dataset({"g": 0.02, "c": 0.5, "d": 0.3})
    s = heuristic_initial_structure(["g", "c", "d"], ds, hard_edges=[("g", "c"), ("g", "d")],
                                    pairs=[("c", "g"), ("c", "d")])
    assert set(s.edges) == {("g", "c"), ("g", "d"), ("c", "d")}
    with pytest.raises(StructureError):
        heuristic_initial_structure(["g", "c"], ds, hard_edges=[("g", "c"), ("c", "g")])


def test_heuristic_flips_instead_of_closing_cycle():
    ds = _rates_dataset({"a": 0.5, "b": 0.3, "c": 0.1})
    s = heuristic_initial_structure(["a", "b", "c"], ds, hard_edges=[("c", "a")],
                                    pairs=[("a", "b"), ("b", "c")])
    # a->b and b->c would close c->a->b->c, so b-c is flipped
    assert set(s.edges) == {("c", "a"), ("a", "b"), ("c", "b")}


def test_entropy_ranking_continuous_last():
    schema = FeatureSchema((), ("x",), (LabelSpec("s", "continuous"), LabelSpec("p"),
                                        LabelSpec("q")))
    n = 100
    ds = Dataset(schema, np.zeros((n, 0), int), np.zeros((n, 1)),
                 {"s": np.arange(n, dtype=float), "p": (np.arange(n) < 10).astype(float),
                  "q": (np.arange(n) < 50).astype(float)})
    assert entropy_ranking([TargetSpec("s", "continuous"), "p", "q"], ds) == ["q", "p", "s"]
