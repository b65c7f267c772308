"""Model selection over Bayesian structures.

A candidate structure is scored by training a dbmtl model per seed and
averaging the validation objective (weighted NLL/MSE, lower is better).
Four ways of choosing candidates are provided: exhaustive enumeration for
up to four targets, greedy incremental construction, local-variation hill
climbing, and an entropy-ordered initializer.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import BudgetError, ConfigurationError, ContractError, StructureError, TrainingError
from .metrics import aggregate, evaluate_model
from .models import ModelConfig, TargetSpec, build_model
from .structure import BayesianStructure, validate_structure
from .training import TrainConfig, evaluate_loss, train

log = logging.getLogger(__name__)

MAX_ENUMERATED_TARGETS = 4


@dataclass(frozen=True)
class SearchBudget:
    max_candidates: int = 50
    epochs: int = 5
    seeds: int = 3
    patience: int = 2

    def __post_init__(self):
        for name in ("epochs", "seeds", "patience"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"budget {name} must be positive")
        if self.max_candidates < 0:
            raise ConfigurationError("budget max_candidates must be >= 0")


@dataclass
class StructureCandidate:
    structure: BayesianStructure
    score: float
    metrics: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    seed_scores: list[float] = field(default_factory=list)
    failed_seeds: list[int] = field(default_factory=list)
    truncated: bool = False

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.score)

    def to_json(self) -> dict:
        return {
            "targets": list(self.structure.targets),
            "edges": self.structure.edge_strings(),
            "score": self.score if math.isfinite(self.score) else None,
            "metrics": self.metrics,
            "seeds": self.seeds,
            "seed_scores": self.seed_scores,
            "failed_seeds": self.failed_seeds,
            "truncated": self.truncated,
        }


def binary_entropy(p):
    """Entropy in bits of a Bernoulli(p); 0 log 0 is taken as 0."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ContractError("probability must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(arr > 0, arr * np.log2(arr), 0.0)
              + np.where(arr < 1, (1 - arr) * np.log2(1 - arr), 0.0))
    return float(h) if h.ndim == 0 else h


def _sub_config(template: ModelConfig, targets, edges) -> ModelConfig:
    """dbmtl config over a subset of the template's targets."""
    keep = set(targets)
    specs = tuple(
        t if t.gated_by is None or t.gated_by in keep else replace(t, gated_by=None)
        for t in template.targets if t.name in keep
    )
    return replace(template, family="dbmtl", targets=specs,
                   edges=tuple(f"{a}->{b}" for a, b in edges))


def score_structure(structure: BayesianStructure, splits, model_config: ModelConfig,
                    train_cfg: TrainConfig, seeds) -> StructureCandidate:
    """Train one dbmtl model per seed and average the validation objective.

    ``splits`` is ``(train, valid)``.  A seed whose training diverges is
    dropped and recorded in ``failed_seeds``; if every seed fails the
    candidate's score is +inf.
    """
    train_set, valid_set = splits[0], splits[1]
    cfg = _sub_config(model_config, structure.targets, structure.edges)
    if not any(t.weight > 0 for t in cfg.targets):
        raise ContractError("at least one target needs a positive weight to score a structure")
    scores, reports, used, failed = [], [], [], []
    for seed in seeds:
        model = build_model(cfg, train_set.schema, seed)
        try:
            train(model, train_set, valid_set, replace(train_cfg, seed=seed))
        except TrainingError as exc:
            log.warning("structure %s seed %d diverged: %s", structure, seed, exc)
            failed.append(seed)
            continue
        scores.append(evaluate_loss(model, valid_set)[0])
        reports.append(evaluate_model(model, valid_set, seed=seed))
        used.append(seed)
    if not scores:
        return StructureCandidate(structure, math.inf, {}, list(seeds), [], failed)
    metrics = aggregate(reports).metrics
    return StructureCandidate(structure, float(np.mean(scores)), metrics, used,
                              [float(s) for s in scores], failed)


def _score_job(args):
    return score_structure(*args)


class CandidateEvaluator:
    """Scores structures with caching, a training budget and optional
    process-level parallelism.

    ``trained`` counts distinct structures actually trained; cached repeats
    and cyclic proposals do not consume budget.
    """

    def __init__(self, model_config: ModelConfig, train_set: Dataset, valid_set: Dataset,
                 train_cfg: TrainConfig = TrainConfig(), budget: SearchBudget = SearchBudget(),
                 jobs: int = 1):
        self.model_config = model_config
        self.splits = (train_set, valid_set)
        self.train_cfg = replace(train_cfg, epochs=budget.epochs, patience=budget.patience)
        self.budget = budget
        self.seeds = [train_cfg.seed + i for i in range(budget.seeds)]
        self.jobs = jobs
        self.cache: dict[tuple, StructureCandidate] = {}
        self.trained = 0

    @staticmethod
    def key(structure):
        return (tuple(sorted(structure.targets)), structure.key())

    @property
    def remaining(self) -> int:
        return self.budget.max_candidates - self.trained

    def evaluate_many(self, structures) -> list[StructureCandidate | None]:
        """Score ``structures``; entries beyond the budget come back as None."""
        todo = []
        for s in structures:
            k = self.key(s)
            if k not in self.cache and all(self.key(t) != k for t in todo):
                todo.append(s)
        todo = todo[: max(self.remaining, 0)]
        args = [(s, self.splits, self.model_config, self.train_cfg, self.seeds) for s in todo]
        if self.jobs > 1 and len(args) > 1:
            with ProcessPoolExecutor(self.jobs) as pool:
                results = list(pool.map(_score_job, args))
        else:
            results = [_score_job(a) for a in args]
        for s, cand in zip(todo, results):
            self.cache[self.key(s)] = cand
            self.trained += 1
        return [self.cache.get(self.key(s)) for s in structures]

    def __call__(self, structure) -> StructureCandidate | None:
        return self.evaluate_many([structure])[0]

    def candidates(self) -> list[StructureCandidate]:
        return sorted(self.cache.values(), key=lambda c: (c.score, c.structure.edge_strings()))

    def report(self) -> list[dict]:
        return [c.to_json() for c in self.candidates()]

    def dumps(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True) + "\n"


def enumerate_dags(targets) -> list[BayesianStructure]:
    """Every labeled DAG over ``targets`` (names, or a count n <= 4).

    Ordered by edge count, then lexicographically by sorted edge list.
    """
    if isinstance(targets, int):
        targets = [f"t{i + 1}" for i in range(targets)]
    targets = list(targets)
    if len(targets) > MAX_ENUMERATED_TARGETS:
        raise BudgetError(
            f"{len(targets)} targets is too many to enumerate (max {MAX_ENUMERATED_TARGETS}); "
            "use greedy_search or local_variation_search"
        )
    pairs = list(itertools.permutations(targets, 2))
    found = []
    for mask in range(1 << len(pairs)):
        edges = [pairs[i] for i in range(len(pairs)) if mask >> i & 1]
        if any((b, a) in edges for a, b in edges):
            continue
        try:
            found.append(validate_structure(targets, edges))
        except StructureError:
            continue
    found.sort(key=lambda s: (len(s.edges), s.key()))
    return found


def _default_order(model_config: ModelConfig, train_set: Dataset) -> list[str]:
    """Descending loss weight, then descending entropy; continuous last."""
    rank = []
    for i, t in enumerate(model_config.targets):
        if t.kind == "binary":
            ent = binary_entropy(float(np.mean(train_set.labels[t.name])))
            rank.append((-t.weight, 0, -ent, i, t.name))
        else:
            rank.append((-t.weight, 1, 0.0, i, t.name))
    return [r[-1] for r in sorted(rank)]


def greedy_search(model_config: ModelConfig, splits, node_order=None,
                  budget: SearchBudget = SearchBudget(), train_cfg: TrainConfig = TrainConfig(),
                  evaluator: CandidateEvaluator | None = None) -> StructureCandidate:
    """Insert targets one at a time, choosing each link to an existing node.

    For a new node and each existing node (in insertion order) the options
    {no edge, new -> existing, existing -> new} are scored with all earlier
    choices frozen; cyclic options are skipped.  Models at each step cover
    only the nodes inserted so far.  At most 3 n (n - 1) / 2 structures are
    trained.
    """
    names = model_config.target_names
    if evaluator is None:
        evaluator = CandidateEvaluator(model_config, splits[0], splits[1], train_cfg, budget)
    order = list(node_order) if node_order is not None else _default_order(model_config, splits[0])
    if sorted(order) != sorted(names) or len(order) != len(names):
        raise ContractError(f"node_order {order} is not a permutation of targets {names}")
    present = [order[0]]
    edges: list[tuple[str, str]] = []
    best = None
    for new in order[1:]:
        present.append(new)
        for old in present[:-1]:
            options = []
            for extra in ([], [(new, old)], [(old, new)]):
                try:
                    options.append(validate_structure(present, edges + extra))
                except StructureError:
                    continue
            results = evaluator.evaluate_many(options)
            scored = [c for c in results if c is not None]
            if scored:
                best = min(scored, key=lambda c: c.score)
                edges = list(best.structure.edges)
            if len(scored) < len(results):
                if best is None:
                    best = StructureCandidate(validate_structure(present, edges), math.inf)
                return replace(best, truncated=True)
    if best is None:  # single target: nothing to choose
        best = evaluator(validate_structure(names, [])) or StructureCandidate(
            validate_structure(names, []), math.inf, truncated=True)
    return best


def _propose(structure: BayesianStructure, rng) -> BayesianStructure | None:
    edges = list(structure.edges)
    moves = ["add"] + (["remove", "reverse"] if edges else [])
    move = moves[rng.integers(len(moves))]
    if move == "add":
        pairs = [p for p in itertools.permutations(structure.targets, 2) if p not in edges]
        if not pairs:
            return None
        edges.append(pairs[rng.integers(len(pairs))])
    else:
        i = rng.integers(len(edges))
        a, b = edges.pop(i)
        if move == "reverse":
            edges.append((b, a))
    try:
        return validate_structure(structure.targets, edges)
    except StructureError:
        return None


def local_variation_search(initial: BayesianStructure, model_config: ModelConfig, splits,
                           budget: SearchBudget = SearchBudget(),
                           train_cfg: TrainConfig = TrainConfig(), rng=None,
                           evaluator: CandidateEvaluator | None = None) -> StructureCandidate:
    """Hill climbing by single-edge mutations.

    Each iteration adds, removes or reverses one uniformly chosen edge.
    Proposals that create a cycle are discarded without using an
    iteration.  A proposal replaces the current structure only if its
    score is strictly lower.  ``budget.max_candidates`` bounds the number
    of iterations (the initial structure is always scored).
    """
    if rng is None:
        rng = np.random.default_rng(train_cfg.seed)
    elif isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if evaluator is None:
        unlimited = replace(budget, max_candidates=budget.max_candidates + 1)
        evaluator = CandidateEvaluator(model_config, splits[0], splits[1], train_cfg, unlimited)
    current = evaluator(initial)
    if current is None:
        return StructureCandidate(initial, math.inf, truncated=True)
    iterations, attempts = 0, 0
    max_attempts = 1000 * max(budget.max_candidates, 1)
    while iterations < budget.max_candidates and attempts < max_attempts:
        attempts += 1
        proposal = _propose(current.structure, rng)
        if proposal is None:
            if len(current.structure.targets) < 2:
                break
            continue
        candidate = evaluator(proposal)
        if candidate is None:
            return replace(current, truncated=True)
        iterations += 1
        if candidate.score < current.score:
            log.info("accepted %s (%.6f < %.6f)", proposal, candidate.score, current.score)
            current = candidate
    return current


def _as_specs(targets, dataset):
    return [t if isinstance(t, TargetSpec) else TargetSpec(t, dataset.schema.label(t).kind)
            for t in targets]


def entropy_ranking(targets, dataset: Dataset) -> list[str]:
    """Causal preference order: binary targets by descending entropy of their
    empirical positive rate, then continuous targets by descending label
    variance.  Ties keep declaration order."""
    keyed = []
    for i, t in enumerate(_as_specs(targets, dataset)):
        y = dataset.labels[t.name]
        if t.kind == "binary":
            keyed.append((0, -binary_entropy(float(np.mean(y))) if len(y) else 0.0, i, t.name))
        else:
            keyed.append((1, -float(np.var(y)) if len(y) else 0.0, i, t.name))
    return [k[-1] for k in sorted(keyed)]


def heuristic_initial_structure(targets, dataset: Dataset, hard_edges=(),
                                pairs=()) -> BayesianStructure:
    """Initial structure from hard causal edges plus entropy-oriented links.

    ``hard_edges`` are added first and always kept.  Each unordered pair in
    ``pairs`` then becomes an edge from the target ranked earlier by
    :func:`entropy_ranking` to the later one, flipped if that direction
    would close a cycle and skipped if both would.
    """
    names = [t.name for t in _as_specs(targets, dataset)]
    edges = list(validate_structure(names, hard_edges).edges)
    rank = {name: i for i, name in enumerate(entropy_ranking(targets, dataset))}
    for a, b in pairs:
        if (a, b) in edges or (b, a) in edges:
            continue
        hi, lo = (a, b) if rank[a] < rank[b] else (b, a)
        for candidate in ((hi, lo), (lo, hi)):
            try:
                validate_structure(names, edges + [candidate])
            except StructureError:
                continue
            edges.append(candidate)
            break
    return validate_structure(names, edges)
