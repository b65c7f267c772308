"""Experiment configs: where the data comes from and which models to run.

An experiment config is a JSON document::

    {
      "data": {"preset": "chain3", "n": 60000, "seed": 0},
      "models": [
        {"name": "vanilla", "family": "vanilla", "weights": [0.7, 0.2, 0.1]},
        {"name": "dbmtl", "family": "dbmtl", "edges": ["t1->t2", "t1->t3"],
         "weights": [0.7, 0.2, 0.1]}
      ],
      "train": {"epochs": 10, "batch_size": 2000, "lr": 0.001},
      "split_fraction": 0.8333333333333334,
      "seeds": [0, 1, 2],
      "output_dir": "runs"
    }

The data source is one of ``{"spec": path, "n", "seed"}`` (a synthetic
spec file), ``{"preset": name, "n", "seed"}``, ``{"dir": path}`` (the
output directory of ``dbmtl generate``) or ``{"csv": path, "schema": path}``.
Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import (Dataset, load_csv, load_schema, read_ground_truth, time_split,
                   with_ground_truth, write_csv, write_ground_truth)
from .errors import ConfigurationError
from .models import ModelConfig, TargetSpec
from .synthetic import SyntheticSpec, generate_synthetic, load_synthetic_spec, preset
from .training import TrainConfig

FORMAT_VERSION = 1
DATA_FILE = "data.csv"
SCHEMA_FILE = "schema.json"
TRUTH_FILE = "ground_truth.csv"
SPEC_FILE = "spec.json"

_MODEL_KEYS = {"name", "family", "edges", "weights", "targets", "embedding_dim",
               "shared_layers", "specific_layers", "bayes_layers", "dropout", "l1", "l2",
               "label_conditioning"}


def _resolve(base: Path, value) -> str:
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


@dataclass
class ExperimentConfig:
    data: dict
    models: list[dict]
    train: TrainConfig = field(default_factory=TrainConfig)
    split_fraction: float = 0.8
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.models:
            raise ConfigurationError("experiment needs at least one model")
        sources = [k for k in ("spec", "preset", "dir", "csv") if k in self.data]
        if len(sources) != 1:
            raise ConfigurationError(
                "data must name exactly one source: spec, preset, dir or csv")
        if "csv" in self.data and "schema" not in self.data:
            raise ConfigurationError("csv data needs a schema path")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigurationError("split_fraction must lie strictly between 0 and 1")
        if not self.seeds:
            raise ConfigurationError("experiment needs at least one seed")
        names = [model_name(m, i) for i, m in enumerate(self.models)]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"model names must be unique, got {names}")
        for m in self.models:
            unknown = set(m) - _MODEL_KEYS
            if unknown:
                raise ConfigurationError(f"unknown model keys {sorted(unknown)}")
            if "family" not in m:
                raise ConfigurationError("every model entry needs a family")

    def to_json(self) -> dict:
        return {
            "data": self.data,
            "models": self.models,
            "train": self.train.to_json(),
            "split_fraction": self.split_fraction,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_json(cls, obj: dict, base: Path | str = ".") -> "ExperimentConfig":
        base = Path(base)
        try:
            data = dict(obj["data"])
            for key in ("spec", "dir", "csv", "schema"):
                if key in data:
                    data[key] = _resolve(base, data[key])
            unknown = set(obj) - {"data", "models", "train", "split_fraction", "seeds",
                                  "output_dir"}
            if unknown:
                raise ConfigurationError(f"unknown experiment keys {sorted(unknown)}")
            return cls(
                data=data,
                models=[dict(m) for m in obj["models"]],
                train=TrainConfig.from_json(obj.get("train", {})),
                split_fraction=float(obj.get("split_fraction", 0.8)),
                seeds=[int(s) for s in obj.get("seeds", [0])],
                output_dir=_resolve(base, obj.get("output_dir", "runs")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"malformed experiment config: {exc!r}") from exc


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    return ExperimentConfig.from_json(obj, path.parent)


def model_name(entry: dict, index: int) -> str:
    return entry.get("name") or f"{entry['family']}-{index}"


def synthetic_source(data: dict) -> SyntheticSpec | None:
    if "preset" in data:
        try:
            return preset(data["preset"])
        except KeyError as exc:
            raise ConfigurationError(str(exc)) from exc
    if "spec" in data:
        return load_synthetic_spec(data["spec"])
    return None


def write_data_dir(dataset: Dataset, path, spec: SyntheticSpec | None = None,
                   provenance: dict | None = None) -> Path:
    """Write CSV, schema, ground-truth sidecar (if any) and a manifest to a new directory."""
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        raise FileExistsError(f"{path} exists and is not empty; refusing to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    write_csv(dataset, path / DATA_FILE)
    (path / SCHEMA_FILE).write_text(json.dumps(dataset.schema.to_json(), indent=2) + "\n")
    if dataset.ground_truth:
        write_ground_truth(dataset, path / TRUTH_FILE)
    if spec is not None:
        (path / SPEC_FILE).write_text(json.dumps(spec.to_json(), indent=2) + "\n")
    manifest = {"format_version": FORMAT_VERSION, "rows": len(dataset),
                "fingerprint": dataset.fingerprint(), "config": provenance or {}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_data_dir(path) -> Dataset:
    """Dataset written by :func:`write_data_dir` (ground truth included if present)."""
    path = Path(path)
    dataset = load_csv(path / DATA_FILE, load_schema(path / SCHEMA_FILE))
    if (path / TRUTH_FILE).exists():
        dataset = with_ground_truth(dataset, read_ground_truth(path / TRUTH_FILE))
    return dataset


def load_data(data: dict) -> Dataset:
    """Materialize the dataset an experiment's ``data`` block describes."""
    spec = synthetic_source(data)
    if spec is not None:
        try:
            n, seed = int(data["n"]), int(data.get("seed", 0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"synthetic data needs an integer n: {exc!r}") from exc
        return generate_synthetic(spec, n, seed)
    if "dir" in data:
        return load_data_dir(data["dir"])
    return load_csv(data["csv"], load_schema(data["schema"]))


def splits(cfg: ExperimentConfig, dataset: Dataset | None = None):
    return time_split(dataset if dataset is not None else load_data(cfg.data), cfg.split_fraction)


def build_model_config(entry: dict, schema) -> ModelConfig:
    """ModelConfig for one experiment model entry over ``schema``'s labels.

    ``targets`` optionally restricts the labels used (in schema order);
    ``weights`` is a list aligned with those targets or a name -> weight map.
    """
    labels = list(schema.labels)
    if "targets" in entry:
        wanted = list(entry["targets"])
        unknown = [t for t in wanted if t not in schema.label_names]
        if unknown:
            raise ConfigurationError(f"unknown targets {unknown}")
        labels = [lab for lab in labels if lab.name in wanted]
    names = [lab.name for lab in labels]
    weights = entry.get("weights")
    if weights is None:
        weights = [1.0] * len(labels)
    elif isinstance(weights, dict):
        unknown = set(weights) - set(names)
        if unknown:
            raise ConfigurationError(f"weights name unknown targets {sorted(unknown)}")
        weights = [weights.get(n, 1.0) for n in names]
    if len(weights) != len(labels):
        raise ConfigurationError(
            f"{len(weights)} weights given for {len(labels)} targets {names}")
    targets = tuple(
        TargetSpec(lab.name, lab.kind, float(w),
                   lab.gated_by if lab.gated_by in names else None)
        for lab, w in zip(labels, weights)
    )
    options = {k: v for k, v in entry.items() if k not in ("name", "weights", "targets")}
    options["targets"] = [asdict(t) for t in targets]
    return ModelConfig.from_json(options)
