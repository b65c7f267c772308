"""The four model families behind one contract.

All families share the same layer stack::

    categorical ids -> embedding lookup --+
    dense values ---------------------------concat -> shared MLP
    shared output -> specific MLP (per target) -> Bayesian MLP (per target)
                  -> target embedding -> linear head (+ logistic if binary)

and differ only in how targets see each other:

``single``   every target owns a full private tower (no sharing at all)
``vanilla``  shared bottom, independent heads
``esmm``     two binary targets (l, m); p_m = f(x) * p_l
``dbmtl``    each Bayesian MLP also consumes its parents' target embeddings

``vanilla`` is literally ``dbmtl`` with no edges, so the two build and
compute identically given the same seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Features, FeatureSchema
from .errors import ConfigurationError, ContractError, DataError
from .structure import BayesianStructure, validate_structure
from .tensor import (
    ComputeGraph,
    Node,
    ParamStore,
    glorot_uniform,
    init_dense,
    mlp_forward,
    param_rng,
)

FAMILIES = ("single", "vanilla", "esmm", "dbmtl")


@dataclass(frozen=True)
class TargetSpec:
    name: str
    kind: str = "binary"
    weight: float = 1.0
    gated_by: str | None = None

    def to_json(self):
        out = {"name": self.name, "kind": self.kind, "weight": self.weight}
        if self.gated_by:
            out["gated_by"] = self.gated_by
        return out


def check_targets(targets) -> None:
    names = [t.name for t in targets]
    if not names:
        raise ConfigurationError("at least one target is required")
    if len(set(names)) != len(names):
        raise ConfigurationError(f"duplicate target names {names}")
    kinds = {t.name: t.kind for t in targets}
    roots = set()
    for t in targets:
        if t.kind not in ("binary", "continuous"):
            raise ConfigurationError(f"target {t.name!r}: unknown kind {t.kind!r}")
        if not t.weight >= 0:
            raise ConfigurationError(f"target {t.name!r}: weight must be >= 0")
        if t.gated_by is not None:
            if kinds.get(t.gated_by) != "binary" or t.gated_by == t.name:
                raise ConfigurationError(
                    f"target {t.name!r} is gated by {t.gated_by!r}, not another binary target"
                )
            roots.add(t.gated_by)
    if len(roots) > 1:
        raise ConfigurationError(f"at most one gating root allowed, got {sorted(roots)}")


@dataclass(frozen=True)
class ModelConfig:
    family: str
    targets: tuple[TargetSpec, ...]
    embedding_dim: int = 16
    shared_layers: tuple[int, ...] = (64, 32)
    specific_layers: tuple[int, ...] = (32, 16)
    bayes_layers: tuple[int, ...] = (16,)
    edges: tuple[str, ...] = ()
    dropout: float = 0.0
    l1: float = 0.0
    l2: float = 0.0
    label_conditioning: bool = False

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        for name in ("shared_layers", "specific_layers", "bayes_layers", "edges"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        check_targets(self.targets)
        dims = (self.embedding_dim, *self.shared_layers, *self.specific_layers, *self.bayes_layers)
        if not (self.shared_layers and self.specific_layers and self.bayes_layers):
            raise ConfigurationError("layer lists must be nonempty")
        if any(int(d) < 1 for d in dims):
            raise ConfigurationError("all dimensions must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigurationError("regularization coefficients must be >= 0")
        if self.edges and self.family != "dbmtl":
            raise ConfigurationError(f"family {self.family!r} takes no structure edges")
        if self.label_conditioning and self.family != "dbmtl":
            raise ConfigurationError("label_conditioning applies to the dbmtl family only")
        if self.family == "esmm":
            if len(self.targets) != 2 or any(t.kind != "binary" for t in self.targets):
                raise ConfigurationError("esmm needs exactly two binary targets")
            l, m = self.targets
            if not (m.gated_by == l.name or l.gated_by == m.name):
                raise ConfigurationError("esmm needs one target gated by the other")
        self.structure  # validates acyclicity

    @property
    def target_names(self) -> list[str]:
        return [t.name for t in self.targets]

    @property
    def structure(self) -> BayesianStructure:
        return validate_structure(self.target_names, self.edges)

    def target(self, name) -> TargetSpec:
        for t in self.targets:
            if t.name == name:
                return t
        raise KeyError(name)

    def with_structure(self, structure) -> "ModelConfig":
        edges = structure.edge_strings() if isinstance(structure, BayesianStructure) else structure
        return replace(self, family="dbmtl", edges=tuple(edges))

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "targets": [t.to_json() for t in self.targets],
            "embedding_dim": self.embedding_dim,
            "shared_layers": list(self.shared_layers),
            "specific_layers": list(self.specific_layers),
            "bayes_layers": list(self.bayes_layers),
            "edges": list(self.edges),
            "dropout": self.dropout,
            "l1": self.l1,
            "l2": self.l2,
            "label_conditioning": self.label_conditioning,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        try:
            obj = dict(obj)
            obj["targets"] = tuple(
                TargetSpec(t["name"], t.get("kind", "binary"), float(t.get("weight", 1.0)),
                           t.get("gated_by"))
                for t in obj["targets"]
            )
            known = set(cls.__dataclass_fields__)
            unknown = set(obj) - known
            if unknown:
                raise ConfigurationError(f"unknown model config keys {sorted(unknown)}")
            return cls(**obj)
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed model config: {exc}") from exc


def targets_from_schema(schema: FeatureSchema, weights=None) -> tuple[TargetSpec, ...]:
    weights = weights or {}
    return tuple(
        TargetSpec(lab.name, lab.kind, float(weights.get(lab.name, 1.0)), lab.gated_by)
        for lab in schema.labels
    )


@dataclass
class Model:
    config: ModelConfig
    schema: FeatureSchema
    params: ParamStore
    seed: int = 0
    heads: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"model": self.config.to_json(), "schema": self.schema.to_json(), "seed": self.seed}

    def tower(self, target) -> str:
        """Name prefix of the bottom (embedding + shared) feeding ``target``."""
        return f"tower/{target}/" if self.config.family == "single" else ""


def _bayes_input_width(config, target, spec_out):
    width = spec_out
    for _ in config.structure.parents(target):
        width += config.bayes_layers[-1] + (1 if config.label_conditioning else 0)
    return width


def build_model(config: ModelConfig, schema: FeatureSchema, seed: int = 0) -> Model:
    """Allocate and initialize every parameter for ``config`` on ``schema``.

    Initial values are Glorot-uniform (biases zero) drawn from a stream keyed
    by ``(seed, parameter name)``.  Output heads start at zero so that an
    untrained head emits the constant sigmoid(0) = 0.5.
    """
    label_names = set(schema.label_names)
    for t in config.targets:
        if t.name not in label_names:
            raise ConfigurationError(f"target {t.name!r} is not a label in the schema")
    params = ParamStore()
    dim = config.embedding_dim
    input_width = len(schema.categoricals) * dim + len(schema.denses)
    if input_width == 0:
        raise ConfigurationError("schema has no features")
    bottoms = [f"tower/{t}/" for t in config.target_names] if config.family == "single" else [""]
    for prefix in bottoms:
        for fname, vocab in schema.categoricals:
            name = f"{prefix}embed/{fname}"
            params.add(name, glorot_uniform(param_rng(seed, name), vocab + 1, dim))
        init_dense(params, f"{prefix}shared", config.shared_layers, input_width, seed)
    heads = {}
    for t in config.targets:
        init_dense(params, f"specific/{t.name}", config.specific_layers,
                   config.shared_layers[-1], seed)
        width = _bayes_input_width(config, t.name, config.specific_layers[-1])
        init_dense(params, f"bayes/{t.name}", config.bayes_layers, width, seed)
        init_dense(params, f"head/{t.name}", (1,), config.bayes_layers[-1], seed, zero=True)
        heads[t.name] = {"embedding": f"bayes/{t.name}", "output": f"head/{t.name}",
                         "kind": t.kind, "bayes_input_width": width}
    return Model(config, schema, params, seed, heads)


def bayes_input_width(model: Model, target: str) -> int:
    return model.heads[target]["bayes_input_width"]


@dataclass
class ForwardResult:
    graph: ComputeGraph
    embeddings: dict[str, Node]
    outputs: dict[str, Node]


def _check_features(model: Model, features: Features):
    c, d = features.categorical, features.dense
    if c.ndim != 2 or c.shape[1] != len(model.schema.categoricals):
        raise DataError(f"expected {len(model.schema.categoricals)} categorical columns")
    if d.ndim != 2 or d.shape[1] != len(model.schema.denses):
        raise DataError(f"expected {len(model.schema.denses)} dense columns")
    if len(c) != len(d):
        raise DataError("categorical and dense row counts differ")


def _bottom(model, graph, features, prefix, mode, rng):
    cfg = model.config
    parts = []
    for j, (fname, vocab) in enumerate(model.schema.categoricals):
        ids = features.categorical[:, j]
        ids = np.where((ids >= 0) & (ids < vocab), ids, vocab)
        parts.append(graph.embedding(graph.param(f"{prefix}embed/{fname}"), ids))
    if model.schema.denses:
        parts.append(graph.constant(features.dense))
    x = graph.concat(parts)
    h = mlp_forward(graph, x, f"{prefix}shared", cfg.shared_layers,
                    dropout=cfg.dropout, mode=mode, rng=rng)
    if cfg.dropout:
        h = graph.dropout(h, cfg.dropout, mode, rng)
    return h


def forward(model: Model, features: Features, mode: str = "infer", rng=None,
            labels: dict | None = None, graph: ComputeGraph | None = None) -> ForwardResult:
    """Evaluate every target head on a batch.

    Targets run in topological order of the structure.  Each Bayesian MLP
    sees its specific-tower output concatenated with the target embeddings
    of its parents (sorted by name).  With ``label_conditioning`` the
    parent's label (training) or prediction (inference) is appended too,
    in which case training-mode calls must pass ``labels``.
    """
    if mode not in ("train", "infer"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    _check_features(model, features)
    cfg = model.config
    graph = graph or ComputeGraph(model.params)
    structure = cfg.structure
    shared = None if cfg.family == "single" else _bottom(model, graph, features, "", mode, rng)
    embeddings, outputs = {}, {}
    for name in structure.order:
        base = shared if shared is not None else _bottom(
            model, graph, features, model.tower(name), mode, rng)
        spec = mlp_forward(graph, base, f"specific/{name}", cfg.specific_layers,
                           dropout=cfg.dropout, mode=mode, rng=rng)
        if cfg.dropout:
            spec = graph.dropout(spec, cfg.dropout, mode, rng)
        parts = [spec]
        for parent in structure.parents(name):
            parts.append(embeddings[parent])
            if cfg.label_conditioning:
                if mode == "train":
                    if labels is None:
                        raise ContractError("label conditioning needs labels in training mode")
                    parts.append(graph.constant(np.asarray(labels[parent], float).reshape(-1, 1)))
                else:
                    parts.append(outputs[parent])
        emb = mlp_forward(graph, graph.concat(parts), f"bayes/{name}", cfg.bayes_layers)
        embeddings[name] = emb
        kind = cfg.target(name).kind
        outputs[name] = mlp_forward(graph, emb, f"head/{name}", (1,),
                                    activation="sigmoid" if kind == "binary" else "identity")
    if cfg.family == "esmm":
        gate, gated = _esmm_pair(cfg)
        outputs[gated] = graph.mul(outputs[gated], outputs[gate])
    return ForwardResult(graph, embeddings, {t: outputs[t] for t in cfg.target_names})


def _esmm_pair(cfg):
    l, m = cfg.targets
    return (l.name, m.name) if m.gated_by == l.name else (m.name, l.name)


def esmm_forward(model: Model, features: Features) -> dict[str, np.ndarray]:
    """Probabilities of an esmm model: the gate's p_l and p_m = f(x) * p_l."""
    if model.config.family != "esmm":
        raise ConfigurationError("esmm_forward needs an esmm-family model")
    res = forward(model, features, "infer")
    return {k: v.value.ravel() for k, v in res.outputs.items()}


@dataclass
class LossResult:
    total: Node
    terms: dict[str, float]
    saturated: int


def validate_labels(labels: dict, specs) -> None:
    for t in specs:
        if t.name not in labels:
            raise DataError(f"missing labels for target {t.name!r}")
        y = np.asarray(labels[t.name])
        if t.kind == "binary" and not np.isin(y, (0.0, 1.0)).all():
            raise DataError(f"binary target {t.name!r} has labels outside {{0, 1}}")
        if not np.isfinite(y).all():
            raise DataError(f"target {t.name!r} has non-finite labels")


def compute_loss(graph: ComputeGraph, outputs: dict[str, Node], labels: dict, specs) -> LossResult:
    """Weighted sum of per-target mean losses.

    Binary targets use the negative log-likelihood of ``labels`` under the
    predicted probability, continuous ones the squared error.  A target with
    weight 0 is left out of the total (and so of the gradient) but its mean
    term is still reported.
    """
    validate_labels(labels, specs)
    before = graph.saturated
    terms, weighted = {}, []
    for t in specs:
        out = outputs[t.name]
        if t.kind == "binary":
            per_sample = graph.logistic_loss(out, labels[t.name])
        else:
            per_sample = graph.squared_error(out, labels[t.name])
        term = graph.mean(per_sample)
        terms[t.name] = float(term.value)
        if t.weight > 0:
            weighted.append(graph.scale(term, t.weight))
    total = graph.add_scalars(weighted)
    return LossResult(total, terms, graph.saturated - before)


def predict(model: Model, features: Features, batch_size: int = 8192) -> dict[str, np.ndarray]:
    """Inference-mode predictions: probabilities for binary targets, raw
    values (log stay-time scale) for continuous ones."""
    _check_features(model, features)
    n = len(features)
    out = {t: np.empty(n) for t in model.config.target_names}
    for start in range(0, n, batch_size):
        idx = slice(start, start + batch_size)
        res = forward(model, features.take(idx), "infer")
        for t, node in res.outputs.items():
            out[t][idx] = node.value.ravel()
    return out


def load_model_config(path) -> ModelConfig:
    with open(path) as fh:
        try:
            return ModelConfig.from_json(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
