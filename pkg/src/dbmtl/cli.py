"""Command-line entry point: ``dbmtl generate|train|eval|search|report``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (unknown flag or
subcommand), 3 malformed config, 4 missing file.  On failure a JSON object
``{"error", "message", "exit_code"}`` is written to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import experiment as exp
from .checkpoint import load_into, save_checkpoint
from .errors import ConfigurationError, DBMTLError, StructureError
from .metrics import (MetricsReport, aggregate, bayes_optimal_metrics, build_report,
                      evaluate_model)
from .models import ModelConfig, build_model
from .search import (CandidateEvaluator, SearchBudget, enumerate_dags, greedy_search,
                     heuristic_initial_structure, local_variation_search)
from .synthetic import generate_synthetic, load_synthetic_spec, preset
from .training import TrainConfig, train

EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING = 1, 2, 3, 4
RUN_FILE = "run.json"
CHECKPOINT_FILE = "checkpoint.json"
HISTORY_FILE = "history.json"
METRICS_FILE = "metrics.json"

log = logging.getLogger("dbmtl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _fresh_dir(parent: Path, stem: str) -> Path:
    """A new directory ``parent/stem`` (or ``stem-2``, ``stem-3``...); never reused."""
    parent.mkdir(parents=True, exist_ok=True)
    candidate, k = parent / stem, 1
    while True:
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            k += 1
            candidate = parent / f"{stem}-{k}"


def _write_new(path: Path, text: str):
    if path.exists() and path.read_text() != text:
        raise FileExistsError(f"{path} exists with different content; refusing to overwrite")
    path.write_text(text)


def _experiment(args) -> exp.ExperimentConfig:
    cfg = exp.load_experiment(args.config)
    if getattr(args, "data", None):
        data = Path(args.data)
        if data.is_dir():
            cfg.data = {"dir": str(data)}
        elif args.schema:
            cfg.data = {"csv": str(data), "schema": args.schema}
        else:
            raise ConfigurationError("--data with a CSV file needs --schema")
        if not data.exists():
            raise FileNotFoundError(f"no such data path: {data}")
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def cmd_generate(args) -> int:
    if bool(args.spec) == bool(args.preset):
        raise UsageError("generate needs exactly one of --spec or --preset")
    spec = load_synthetic_spec(args.spec) if args.spec else preset(args.preset)
    if args.n < 1:
        raise ConfigurationError("--n must be >= 1")
    dataset = generate_synthetic(spec, args.n, args.seed)
    provenance = {"spec": spec.to_json(), "n": args.n, "seed": args.seed}
    out = exp.write_data_dir(dataset, args.out, spec, provenance)
    print(_dump({"out": str(out), "rows": len(dataset), "fingerprint": dataset.fingerprint()}),
          end="")
    return 0


def _run_config(cfg, entry, model_cfg, seed, fingerprint, sizes) -> dict:
    return {
        "experiment": cfg.to_json(),
        "model_name": entry["name"],
        "model": model_cfg.to_json(),
        "seed": seed,
        "train": cfg.train.to_json() | {"seed": seed},
        "dataset_fingerprint": fingerprint,
        "split_sizes": sizes,
    }


def cmd_train(args) -> int:
    cfg = _experiment(args)
    dataset = exp.load_data(cfg.data)
    train_set, valid_set, test_set = exp.splits(cfg, dataset)
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    entries = [dict(m, name=exp.model_name(m, i)) for i, m in enumerate(cfg.models)]
    if args.model:
        entries = [e for e in entries if e["name"] in args.model]
        if not entries:
            raise ConfigurationError(f"no model named {args.model} in the experiment")
    sizes = [len(train_set), len(valid_set), len(test_set)]
    out_dirs = []
    for entry in entries:
        model_cfg = exp.build_model_config(entry, dataset.schema)
        for seed in seeds:
            run = _run_config(cfg, entry, model_cfg, seed, dataset.fingerprint(), sizes)
            model = build_model(model_cfg, dataset.schema, seed)
            tcfg = TrainConfig.from_json(run["train"])
            model, history = train(model, train_set, valid_set, tcfg)
            run_dir = _fresh_dir(Path(cfg.output_dir), f"{entry['name']}-seed{seed}")
            (run_dir / RUN_FILE).write_text(_dump({"format_version": exp.FORMAT_VERSION,
                                                   "config": run}))
            save_checkpoint(run_dir / CHECKPOINT_FILE, model.params,
                            {"run": run, "schema": dataset.schema.to_json()})
            (run_dir / HISTORY_FILE).write_text(_dump({"format_version": exp.FORMAT_VERSION,
                                                       "config": run,
                                                       "history": history.to_json()}))
            log.info("trained %s seed %d -> %s", entry["name"], seed, run_dir)
            out_dirs.append(str(run_dir))
    print("\n".join(out_dirs))
    return 0


def _load_run(run_dir: Path) -> dict:
    path = run_dir / RUN_FILE
    if not path.exists():
        raise FileNotFoundError(f"{run_dir} is not a run directory (no {RUN_FILE})")
    return json.loads(path.read_text())["config"]


def cmd_eval(args) -> int:
    cache = {}
    for run_dir in map(Path, args.run_dirs):
        run = _load_run(run_dir)
        cfg = exp.ExperimentConfig.from_json(run["experiment"])
        if args.data:
            cfg.data = {"dir": args.data} if Path(args.data).is_dir() else {
                "csv": args.data, "schema": args.schema}
        key = json.dumps(cfg.data, sort_keys=True), cfg.split_fraction
        if key not in cache:
            cache[key] = exp.splits(cfg)
        split = cache[key][2 if args.split == "test" else 1]
        model = build_model(ModelConfig.from_json(run["model"]), split.schema, run["seed"])
        load_into(model.params, run_dir / CHECKPOINT_FILE)
        report = evaluate_model(model, split, seed=run["seed"], name=run["model_name"])
        text = _dump({"format_version": exp.FORMAT_VERSION,
                      "config": run | {"split": args.split},
                      "report": report.to_json()})
        _write_new(run_dir / METRICS_FILE, text)
        print(text, end="")
    return 0


def _template(cfg: exp.ExperimentConfig, schema):
    entries = [dict(m, name=exp.model_name(m, i)) for i, m in enumerate(cfg.models)]
    entry = next((e for e in entries if e["family"] == "dbmtl"), entries[0])
    entry = {k: v for k, v in entry.items() if k not in ("edges", "label_conditioning")}
    entry["family"] = "dbmtl"
    return exp.build_model_config(entry, schema)


def cmd_search(args) -> int:
    cfg = _experiment(args)
    dataset = exp.load_data(cfg.data)
    train_set, valid_set, _ = exp.splits(cfg, dataset)
    template = _template(cfg, dataset.schema)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    tcfg = TrainConfig.from_json(cfg.train.to_json() | {"seed": seed})
    budget = SearchBudget(max_candidates=args.budget, epochs=max(tcfg.epochs, 1),
                          seeds=args.search_seeds, patience=tcfg.patience or 2)
    evaluator = CandidateEvaluator(template, train_set, valid_set, tcfg, budget, args.jobs)
    names = template.target_names
    splits = (train_set, valid_set)
    if args.strategy == "enumerate":
        evaluator.evaluate_many(enumerate_dags(names))
        best = evaluator.candidates()[0] if evaluator.cache else None
    elif args.strategy == "greedy":
        best = greedy_search(template, splits, budget=budget, train_cfg=tcfg,
                             evaluator=evaluator)
    else:
        gating = [(t.gated_by, t.name) for t in template.targets if t.gated_by]
        initial = heuristic_initial_structure(template.targets, train_set, hard_edges=gating)
        evaluator.budget = SearchBudget(budget.max_candidates + 1, budget.epochs,
                                        budget.seeds, budget.patience)
        best = local_variation_search(initial, template, splits, budget, tcfg, seed,
                                      evaluator)
    out = _fresh_dir(Path(cfg.output_dir), f"search-{args.strategy}-seed{seed}")
    report = {
        "format_version": exp.FORMAT_VERSION,
        "config": {"experiment": cfg.to_json(), "strategy": args.strategy,
                   "budget": asdict(budget),
                   "model": template.to_json(), "train": tcfg.to_json()},
        "trained": evaluator.trained,
        "best": best.to_json() if best is not None else None,
        "candidates": evaluator.report(),
    }
    (out / "search.json").write_text(_dump(report))
    print(str(out))
    return 0


def _metrics_files(paths) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if not p.exists():
            raise FileNotFoundError(f"no such run directory: {p}")
        if (p / METRICS_FILE).exists():
            found.append(p / METRICS_FILE)
        else:
            nested = sorted(p.glob(f"*/{METRICS_FILE}"))
            if not nested:
                raise FileNotFoundError(f"{p} holds no {METRICS_FILE}; run `dbmtl eval` first")
            found += nested
    return found


def cmd_report(args) -> int:
    groups: dict[str, list[MetricsReport]] = {}
    configs = {}
    for path in _metrics_files(args.run_dirs):
        obj = json.loads(path.read_text())
        report = MetricsReport.from_json(obj["report"])
        groups.setdefault(report.name, []).append(report)
        configs.setdefault(report.name, obj["config"])
    rows = [aggregate(reports, name) for name, reports in groups.items()]
    if args.oracle:
        run = next(iter(configs.values()))
        cfg = exp.ExperimentConfig.from_json(run["experiment"])
        split = exp.splits(cfg)[2 if run.get("split", "test") == "test" else 1]
        rows.append(bayes_optimal_metrics(split))
    table = build_report(rows, args.primary)
    print(table.to_text(), end="")
    if args.out:
        out = Path(args.out)
        if out.exists():
            raise FileExistsError(f"{out} exists; refusing to overwrite")
        doc = table.to_json() | {"config": {"runs": [str(p) for p in args.run_dirs],
                                            "primary": args.primary, "oracle": args.oracle}}
        out.write_text(_dump(doc))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dbmtl", description="Deep Bayesian multi-target learning lab.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--spec", help="synthetic spec JSON")
    p.add_argument("--preset", help="named built-in spec (chain3, pair, entropy, live6)")
    p.add_argument("--n", type=int, required=True, help="number of rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="new or empty output directory")
    p.set_defaults(func=cmd_generate)

    data_help = "generated data directory, or a CSV file (with --schema)"
    p = sub.add_parser("train", help="train every model of an experiment config",
                       description="Defaults (overridable in the config): embedding 16, "
                                   "shared [64, 32], specific [32, 16], bayes [16], "
                                   "batch 2000, lr 0.001, 10 epochs.")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, help="train only this seed (default: config seeds)")
    p.add_argument("--data", help=data_help)
    p.add_argument("--schema", help="schema JSON for --data CSV")
    p.add_argument("--out", help="parent directory for run directories")
    p.add_argument("--model", action="append", help="train only the named model(s)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--data", help=data_help)
    p.add_argument("--schema", help="schema JSON for --data CSV")
    p.add_argument("--split", choices=("test", "valid"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="search over Bayesian structures")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--strategy", choices=("enumerate", "greedy", "local"), default="greedy")
    p.add_argument("--budget", type=int, default=50, help="max structures trained")
    p.add_argument("--search-seeds", type=int, default=1, help="training seeds per structure")
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help=data_help)
    p.add_argument("--schema", help="schema JSON for --data CSV")
    p.add_argument("--out", help="parent directory for the search directory")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", help="comparison table across evaluated runs")
    p.add_argument("run_dirs", nargs="+", help="run directories or their parents")
    p.add_argument("--primary", help="target to sort rows by (default: first)")
    p.add_argument("--oracle", action="store_true", help="add the Bayes-optimal row")
    p.add_argument("--out", help="write the JSON table here")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(exc, code) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    except (ConfigurationError, StructureError, json.JSONDecodeError) as exc:
        return _fail(exc, EXIT_CONFIG)
    except FileNotFoundError as exc:
        return _fail(exc, EXIT_MISSING)
    except (DBMTLError, OSError, ValueError, RuntimeError) as exc:
        return _fail(exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
