"""
The command-line workflow
=========================

generate -> train -> eval -> report, plus a structure search, all through
``dbmtl.cli.main`` inside a scratch directory.  The same steps run from a
shell as ``dbmtl generate ...`` and so on.
"""

import json
import tempfile
from pathlib import Path

from dbmtl.cli import main

work = Path(tempfile.mkdtemp(prefix="dbmtl-demo-"))
print("working in", work)

main(["generate", "--preset", "chain3", "--n", "12000", "--seed", "3",
      "--out", str(work / "data")])

experiment = {
    "data": {"dir": "data"},
    "models": [
        {"name": "vanilla", "family": "vanilla", "weights": [0.7, 0.2, 0.1]},
        {"name": "dbmtl", "family": "dbmtl", "edges": ["t1->t2", "t1->t3"],
         "weights": [0.7, 0.2, 0.1]},
    ],
    "train": {"epochs": 3, "batch_size": 1000, "lr": 0.002},
    "split_fraction": 0.8,
    "seeds": [0, 1],
    "output_dir": "runs",
}
(work / "exp.json").write_text(json.dumps(experiment, indent=2))

main(["train", "--config", str(work / "exp.json")])
run_dirs = sorted(str(p) for p in (work / "runs").iterdir())
main(["eval", *run_dirs])
main(["report", str(work / "runs"), "--oracle", "--primary", "t3"])

main(["search", "--config", str(work / "exp.json"), "--strategy", "greedy", "--seed", "0"])
report = json.loads(next((work / "runs").glob("search-*/search.json")).read_text())
print("greedy search trained", report["trained"], "structures; best:", report["best"]["edges"])

# Errors come back as exit codes with a JSON message on stderr.
print("exit code for a missing config:", main(["train", "--config", str(work / "nope.json")]))
