"""
Reverse-mode autodiff on numpy arrays
=====================================

Build a tiny two-layer network on a ComputeGraph, backpropagate a logistic
loss, compare against central finite differences, then take Adam steps.
"""

import numpy as np

from dbmtl.optim import AdamState, adam_step
from dbmtl.tensor import ComputeGraph, ParamStore, init_dense, mlp_forward

# Parameters live in a ParamStore; a ComputeGraph is rebuilt for every batch.
store = ParamStore()
init_dense(store, "net", (8, 1), input_width=3, seed=0)
print("parameters:", {name: store[name].shape for name in store})

rng = np.random.default_rng(1)
x = rng.standard_normal((64, 3))
y = (x @ np.array([1.0, -2.0, 0.5]) > 0).astype(float)


def loss_value(backprop=False):
    g = ComputeGraph(store)
    p = mlp_forward(g, g.constant(x), "net", (8, 1), final_activation="sigmoid")
    loss = g.mean(g.logistic_loss(p, y.reshape(-1, 1)))
    if backprop:
        g.backward(loss)
    return float(loss.value)


# Analytic gradient of the first weight matrix...
loss_value(backprop=True)
analytic = store.grad("net/0/W").copy()

# ...against central differences with h = 1e-6.
h = 1e-6
W = store["net/0/W"]
numeric = np.zeros_like(W)
for i in np.ndindex(W.shape):
    orig = W[i]
    W[i] = orig + h
    up = loss_value()
    W[i] = orig - h
    down = loss_value()
    W[i] = orig
    numeric[i] = (up - down) / (2 * h)
err = np.linalg.norm(analytic - numeric) / (np.linalg.norm(analytic) + np.linalg.norm(numeric))
print(f"relative gradient error: {err:.2e}")

# A few hundred Adam steps fit the linearly separable labels.
state = AdamState(lr=0.05)
for step in range(300):
    loss_value(backprop=True)
    adam_step(store, state)
print(f"loss after {state.t} Adam steps: {loss_value():.4f}")
