"""Metrics, oracle ceilings on synthetic data, and comparison tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import Dataset
from .errors import ComparisonError, ContractError
from .tensor import PROB_EPS


def auc(scores, labels, with_flag=False):
    """Mann-Whitney AUC: P(random positive outranks random negative), ties = 1/2.

    With a single label class (or constant scores) there is no ranking
    information; the value is 0.5 and the degeneracy flag is set.
    ``with_flag=True`` returns ``(value, degenerate)``.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ContractError(f"length mismatch: {scores.size} scores vs {labels.size} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return (0.5, True) if with_flag else 0.5
    ranks = rankdata(scores)  # average ranks resolve ties as half credit
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    value = float(u / (n_pos * n_neg))
    degenerate = bool(scores.min() == scores.max())
    return (value, degenerate) if with_flag else value


def mse(preds, labels) -> float:
    preds = np.asarray(preds, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if preds.shape != labels.shape:
        raise ContractError("length mismatch")
    if preds.size == 0:
        raise ContractError("mse of an empty list")
    diff = preds - labels
    return float(np.mean(diff * diff))


def log_loss(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64).ravel(), PROB_EPS, 1 - PROB_EPS)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape or p.size == 0:
        raise ContractError("log_loss needs equal-length nonempty inputs")
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def target_metrics(kind, pred, y, gate=None) -> dict:
    """AUC (+ log-loss) for binary targets, MSE for continuous ones.

    For a gated continuous target the MSE restricted to rows with the gate
    on is added as ``mse_clicked``.
    """
    if kind == "binary":
        value, degenerate = auc(pred, y, with_flag=True)
        return {"kind": "auc", "value": value, "degenerate": degenerate,
                "log_loss": log_loss(pred, y)}
    out = {"kind": "mse", "value": mse(pred, y)}
    if gate is not None and (gate == 1).any():
        out["mse_clicked"] = mse(pred[gate == 1], y[gate == 1])
    return out


@dataclass
class MetricsReport:
    family: str
    edges: list[str]
    metrics: dict[str, dict]
    dataset_fingerprint: str
    seeds: list[int] = field(default_factory=list)
    time_range: list[int] | None = None
    name: str | None = None

    def value(self, target) -> float:
        return self.metrics[target]["value"]

    def to_json(self) -> dict:
        out = {
            "family": self.family,
            "edges": list(self.edges),
            "metrics": self.metrics,
            "dataset_fingerprint": self.dataset_fingerprint,
            "seeds": list(self.seeds),
            "time_range": self.time_range,
        }
        if self.name is not None:
            out["name"] = self.name
        return out

    @classmethod
    def from_json(cls, obj) -> "MetricsReport":
        return cls(obj["family"], list(obj.get("edges", [])), obj["metrics"],
                   obj["dataset_fingerprint"], list(obj.get("seeds", [])),
                   obj.get("time_range"), obj.get("name"))


def _time_range(dataset):
    if dataset.timestamp is None or len(dataset) == 0:
        return None
    return [int(dataset.timestamp.min()), int(dataset.timestamp.max())]


def _gate_of(dataset, target):
    lab = dataset.schema.label(target)
    return dataset.labels[lab.gated_by] if lab.gated_by else None


def evaluate_predictions(preds: dict, dataset: Dataset, kinds: dict) -> dict:
    return {
        t: target_metrics(kinds[t], preds[t], dataset.labels[t], _gate_of(dataset, t))
        for t in preds
    }


def evaluate_model(model, dataset: Dataset, seed=None, name=None) -> MetricsReport:
    """Metrics of ``model``'s inference-mode predictions on ``dataset``."""
    from .models import predict

    preds = predict(model, dataset.features)
    kinds = {t.name: t.kind for t in model.config.targets}
    return MetricsReport(
        family=model.config.family,
        edges=model.config.structure.edge_strings(),
        metrics=evaluate_predictions(preds, dataset, kinds),
        dataset_fingerprint=dataset.fingerprint(),
        seeds=[] if seed is None else [seed],
        time_range=_time_range(dataset),
        name=name,
    )


def bayes_optimal_metrics(dataset: Dataset) -> MetricsReport:
    """Metrics of the generator's own P(t | x) / E[t | x] used as predictor."""
    truth = dataset.ground_truth
    if not truth:
        raise ContractError("dataset carries no generator ground truth")
    preds, kinds = {}, {}
    for lab in dataset.schema.labels:
        key = f"marginal/{lab.name}"
        if key not in truth:
            raise ContractError(f"ground truth lacks {key!r}")
        preds[lab.name] = truth[key]
        kinds[lab.name] = lab.kind
    return MetricsReport("oracle", [], evaluate_predictions(preds, dataset, kinds),
                         dataset.fingerprint(), [], _time_range(dataset), "oracle")


def aggregate(reports: list[MetricsReport], name=None) -> MetricsReport:
    """Seed-mean of per-target values, with min/max range."""
    if not reports:
        raise ContractError("nothing to aggregate")
    first = reports[0]
    for r in reports[1:]:
        if r.dataset_fingerprint != first.dataset_fingerprint:
            raise ComparisonError("reports were computed on different datasets")
    metrics = {}
    for target, m in first.metrics.items():
        values = [r.metrics[target]["value"] for r in reports]
        metrics[target] = {
            "kind": m["kind"],
            "value": float(np.mean(values)),
            "min": float(np.min(values)),
            "max": float(np.max(values)),
        }
        if "degenerate" in m:
            metrics[target]["degenerate"] = all(r.metrics[target]["degenerate"] for r in reports)
    seeds = [s for r in reports for s in r.seeds]
    return MetricsReport(first.family, first.edges, metrics, first.dataset_fingerprint,
                         seeds, first.time_range, name or first.name)


@dataclass
class ReportTable:
    rows: list[MetricsReport]
    targets: list[str]
    dataset_fingerprint: str

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "dataset_fingerprint": self.dataset_fingerprint,
            "rows": [
                {"name": r.name, "family": r.family, "edges": r.edges,
                 "metrics": {t: r.metrics[t] for t in self.targets if t in r.metrics},
                 "seeds": r.seeds}
                for r in self.rows
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        kinds = {}
        for r in self.rows:
            for t in self.targets:
                if t in r.metrics:
                    kinds.setdefault(t, r.metrics[t]["kind"])
        header = ["model", "structure"] + [f"{t} ({kinds.get(t, '?')})" for t in self.targets]
        lines = [header]
        for r in self.rows:
            cells = [r.name or r.family, ",".join(r.edges) or "-"]
            for t in self.targets:
                cells.append(repr(r.metrics[t]["value"]) if t in r.metrics else "")
            lines.append(cells)
        widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
        return "\n".join(
            "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in lines
        ) + "\n"


def build_report(runs: list[MetricsReport], primary: str | None = None) -> ReportTable:
    """One row per run, best primary-target metric first.

    AUC rows sort descending; if the primary target is continuous its MSE
    sorts ascending.  Runs must share a dataset fingerprint.
    """
    if not runs:
        raise ContractError("no runs to report")
    fp = runs[0].dataset_fingerprint
    if any(r.dataset_fingerprint != fp for r in runs):
        raise ComparisonError("runs were evaluated on different datasets")
    targets = []
    for r in runs:
        targets += [t for t in r.metrics if t not in targets]
    primary = primary or targets[0]

    def key(r):
        m = r.metrics.get(primary)
        if m is None:
            return (1, 0.0)
        return (0, -m["value"] if m["kind"] == "auc" else m["value"])

    return ReportTable(sorted(runs, key=key), targets, fp)
