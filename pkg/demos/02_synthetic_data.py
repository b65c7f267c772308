"""
Synthetic targets with a known causal structure
===============================================

The generator draws features, a latent quality score and binary or
continuous targets along a DAG.  Gated targets are forced to zero when the
gate is off, and every row carries the generator's own probabilities, which
give an unbeatable reference AUC.
"""

import numpy as np

from dbmtl.data import time_split
from dbmtl.metrics import bayes_optimal_metrics
from dbmtl.synthetic import generate_synthetic, preset

spec = preset("live6")
print("targets:", spec.target_names)
print("true edges:", [f"{a}->{b}" for a, b in spec.edges])

ds = generate_synthetic(spec, 50_000, seed=0)
ctr = ds.labels["ctr"]
print(f"ctr rate {ctr.mean():.3f} (configured {spec.marginal_rate('ctr'):.3f})")

# In-room rates are configured conditional on the click.
for name in ("cgr", "cfr", "ccr", "clr"):
    print(f"{name}: rate given click {ds.labels[name][ctr == 1].mean():.3f}, "
          f"configured {spec.target(name).rate:.3f}")

# Stay time is ln(1 + seconds): zero whenever there was no click.
ast = ds.labels["ast"]
print("stay time off the gate is zero:", bool(np.all(ast[ctr == 0] == 0.0)))
print(f"mean log stay time given click: {ast[ctr == 1].mean():.3f}")

# Rows span 16 days; the last day is split into validation and test.
train, valid, test = time_split(ds, 15 / 16)
print("split sizes:", len(train), len(valid), len(test))

print("oracle metrics on the test day:")
for name, m in bayes_optimal_metrics(test).metrics.items():
    print(f"  {name}: {m['kind']} {m['value']:.4f}")
