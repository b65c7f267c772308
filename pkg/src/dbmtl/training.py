"""Mini-batch Adam training with validation-based model selection."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, DataError, TrainingError
from .metrics import target_metrics
from .models import Model, compute_loss, forward, validate_labels
from .optim import AdamState, adam_step
from .tensor import ComputeGraph, regularization_penalty

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 2000
    lr: float = 1e-3
    seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise ConfigurationError("patience must be >= 1")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown train config keys {sorted(unknown)}")
        return cls(**obj)


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_valid_loss: float | None = None
    saturated: int = 0

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_valid_loss": self.best_valid_loss,
            "saturated": self.saturated,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @property
    def train_losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]


def _evaluate(model: Model, dataset: Dataset, batch_size: int = 8192):
    specs = model.config.targets
    n = len(dataset)
    if n == 0:
        raise DataError("cannot evaluate on an empty dataset")
    totals = {t.name: 0.0 for t in specs}
    preds = {t.name: [] for t in specs}
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        batch = dataset.subset(idx)
        res = forward(model, batch.features, "infer")
        loss = compute_loss(res.graph, res.outputs, batch.labels, specs)
        for name, value in loss.terms.items():
            totals[name] += value * len(idx)
        for name, node in res.outputs.items():
            preds[name].append(node.value.ravel())
    terms = {k: v / n for k, v in totals.items()}
    total = math.fsum(t.weight * terms[t.name] for t in specs if t.weight > 0)
    return total, terms, {k: np.concatenate(v) for k, v in preds.items()}


def evaluate_loss(model: Model, dataset: Dataset, batch_size: int = 8192):
    """Mean weighted NLL/MSE objective (no regularization) and per-target means."""
    total, terms, _ = _evaluate(model, dataset, batch_size)
    return total, terms


def train(model: Model, train_set: Dataset, valid_set: Dataset | None,
          cfg: TrainConfig) -> tuple[Model, History]:
    """Train ``model`` in place and return it with its history.

    Each epoch shuffles the training rows with a stream seeded by
    ``cfg.seed``.  When a validation set is given, the parameters from the
    epoch with the lowest validation loss are restored at the end, and
    training stops early after ``cfg.patience`` epochs without improvement.
    """
    if len(train_set) == 0:
        raise DataError("training set is empty")
    specs = model.config.targets
    validate_labels(train_set.labels, specs)
    if not any(t.weight > 0 for t in specs):
        log.warning("all target weights are zero; parameters will not move")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    history = History()
    best_state = model.params.state()
    best_loss = math.inf
    since_best = 0
    mcfg = model.config
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            batch = train_set.subset(idx)
            graph = ComputeGraph(model.params)
            res = forward(model, batch.features, "train", rng, batch.labels, graph)
            loss = compute_loss(graph, res.outputs, batch.labels, specs)
            objective = loss.total
            if mcfg.l1 or mcfg.l2:
                objective = graph.add(objective, regularization_penalty(graph, mcfg.l1, mcfg.l2))
            value = float(objective.value)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}",
                                    epoch=epoch, batch=b)
            graph.backward(objective)
            adam_step(model.params, state)
            history.saturated += loss.saturated
            total += float(loss.total.value) * len(idx)
            seen += len(idx)
        if not model.params.all_finite():
            raise TrainingError(f"non-finite parameters after epoch {epoch}", epoch=epoch)
        record = {"epoch": epoch, "train_loss": total / seen}
        if valid_set is not None and len(valid_set):
            vloss, vterms, preds = _evaluate(model, valid_set)
            metrics = {
                t.name: target_metrics(t.kind, preds[t.name], valid_set.labels[t.name])["value"]
                for t in specs
            }
            record.update(valid_loss=vloss, valid_terms=vterms, valid_metrics=metrics)
            if vloss < best_loss:
                best_loss, best_state, since_best = vloss, model.params.state(), 0
                history.best_epoch, history.best_valid_loss = epoch, vloss
            else:
                since_best += 1
        history.epochs.append(record)
        log.debug("epoch %d: %s", epoch, record)
        if cfg.patience is not None and since_best >= cfg.patience:
            break
    if history.best_epoch is not None:
        model.params.load_state(best_state)
    return model, history


def clone(model: Model) -> Model:
    return copy.deepcopy(model)
