"""Minimal reverse-mode differentiation over float64 numpy arrays.

A :class:`ComputeGraph` is a tape: every op evaluates eagerly, appends a
node, and records a closure mapping the node's adjoint to adjoints of its
inputs.  Because inputs must exist before a node is created, construction
order is already a topological order, and :meth:`ComputeGraph.backward`
simply walks the tape in reverse.

Parameters live in a :class:`ParamStore`.  A graph reads them through
:meth:`ComputeGraph.param`, and backward writes the resulting gradients
back into the store.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractError

DTYPE = np.float64

#: Probabilities fed to the logistic loss are clamped to [EPS, 1 - EPS].
PROB_EPS = 1e-12


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray | None = None


class ParamStore:
    """Named float64 parameter arrays with same-shape gradient slots."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=DTYPE)
        self._params[name] = Param(value)
        return value

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> np.ndarray:
        return self._params[name].value

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=DTYPE)
        param = self._params[name]
        if value.shape != param.value.shape:
            raise ContractError(
                f"shape mismatch for {name!r}: {value.shape} vs {param.value.shape}"
            )
        param.value = value.copy()

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def grad(self, name) -> np.ndarray | None:
        return self._params[name].grad

    def set_grad(self, name, grad):
        param = self._params[name]
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != param.value.shape:
            raise ContractError(f"gradient shape mismatch for {name!r}")
        param.grad = grad

    def zero_grad(self):
        for param in self._params.values():
            param.grad = np.zeros_like(param.value)

    def size(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        """Deep copy of all values, keyed by name."""
        return {k: p.value.copy() for k, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._params) ^ set(state)
        if missing:
            raise ContractError(f"state does not match store: {sorted(missing)}")
        for name, value in state.items():
            self[name] = value

    def all_finite(self) -> bool:
        return all(np.isfinite(p.value).all() for p in self._params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self._params.values()])

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([p.grad.ravel() for p in self._params.values()])


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream per (seed, parameter name).

    Initial values then do not depend on the order in which parameters are
    allocated, which keeps models built from reordered configs identical.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def glorot_uniform(rng, fan_in, fan_out) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Node:
    __slots__ = ("id", "op", "inputs", "value", "grad", "backward_fn", "param")

    def __init__(self, id, op, inputs, value, backward_fn=None, param=None):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.value = value
        self.grad = None
        self.backward_fn = backward_fn
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.id}, {self.op}, shape={self.value.shape})"


class ComputeGraph:
    """Eager tape of differentiable ops.

    ``saturated`` counts probabilities that had to be clamped by
    :meth:`logistic_loss`; it is a diagnostic only.
    """

    def __init__(self, params: ParamStore | None = None):
        self.params = params
        self.nodes: list[Node] = []
        self._param_nodes: dict[str, Node] = {}
        self.saturated = 0

    def _add(self, op, inputs, value, backward_fn=None, param=None) -> Node:
        node = Node(len(self.nodes), op, tuple(inputs), value, backward_fn, param)
        self.nodes.append(node)
        return node

    # leaves

    def constant(self, value) -> Node:
        return self._add("const", (), np.asarray(value, dtype=DTYPE))

    def param(self, name: str) -> Node:
        node = self._param_nodes.get(name)
        if node is None:
            if self.params is None:
                raise ContractError("graph has no ParamStore attached")
            node = self._add("param", (), self.params[name], param=name)
            self._param_nodes[name] = node
        return node

    # elementwise

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ContractError(f"add shape mismatch {a.shape} vs {b.shape}")
        return self._add("add", (a, b), a.value + b.value, lambda g: (g, g))

    def sub(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ContractError(f"sub shape mismatch {a.shape} vs {b.shape}")
        return self._add("sub", (a, b), a.value - b.value, lambda g: (g, -g))

    def mul(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ContractError(f"mul shape mismatch {a.shape} vs {b.shape}")
        av, bv = a.value, b.value
        return self._add("mul", (a, b), av * bv, lambda g: (g * bv, g * av))

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._add("scale", (a,), a.value * c, lambda g: (g * c,))

    def relu(self, a: Node) -> Node:
        mask = a.value > 0
        return self._add("relu", (a,), np.where(mask, a.value, 0.0), lambda g: (g * mask,))

    def sigmoid(self, a: Node) -> Node:
        out = expit(a.value)
        return self._add("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))

    def identity(self, a: Node) -> Node:
        return a

    def square(self, a: Node) -> Node:
        av = a.value
        return self._add("square", (a,), av * av, lambda g: (2.0 * g * av,))

    def abs(self, a: Node) -> Node:
        sign = np.sign(a.value)
        return self._add("abs", (a,), np.abs(a.value), lambda g: (g * sign,))

    # reductions

    def sum(self, a: Node) -> Node:
        shape = a.shape
        return self._add(
            "sum", (a,), np.asarray(a.value.sum()), lambda g: (np.full(shape, g),)
        )

    def mean(self, a: Node) -> Node:
        shape, n = a.shape, a.value.size
        return self._add(
            "mean", (a,), np.asarray(a.value.mean()), lambda g: (np.full(shape, g / n),)
        )

    def add_scalars(self, terms: list[Node]) -> Node:
        """Left-to-right sum of scalar nodes (an empty list gives 0)."""
        if not terms:
            return self.constant(0.0)
        total = terms[0]
        for t in terms[1:]:
            total = self.add(total, t)
        return total

    # structural

    def dense(self, x: Node, w: Node, b: Node) -> Node:
        """Affine map ``x @ w + b`` for a batch ``x`` of shape (n, fan_in)."""
        if x.value.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ConfigurationError(
                f"dense input width {x.shape[-1]} does not match weight {w.shape}"
            )
        xv, wv = x.value, w.value

        def back(g):
            return g @ wv.T, xv.T @ g, g.sum(axis=0)

        return self._add("dense", (x, w, b), xv @ wv + b.value, back)

    def concat(self, parts: list[Node]) -> Node:
        """Concatenate (n, k_i) nodes along the feature axis."""
        if len(parts) == 1:
            return parts[0]
        widths = [p.shape[1] for p in parts]
        bounds = np.cumsum([0] + widths)

        def back(g):
            return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

        value = np.concatenate([p.value for p in parts], axis=1)
        return self._add("concat", parts, value, back)

    def embedding(self, table: Node, ids) -> Node:
        """Row lookup ``table[ids]``; repeated ids accumulate gradient."""
        ids = np.asarray(ids, dtype=np.int64)
        rows = table.shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= rows):
            raise ContractError(f"embedding id out of range for table with {rows} rows")

        def back(g):
            out = np.zeros_like(table.value)
            np.add.at(out, ids, g)
            return (out,)

        return self._add("embedding", (table,), table.value[ids], back)

    def dropout(self, x: Node, rate: float, mode: str = "train", rng=None) -> Node:
        """Inverted dropout: kept units are scaled by 1/(1 - rate) in training."""
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
        if mode not in ("train", "infer"):
            raise ConfigurationError(f"unknown mode {mode!r}")
        if mode == "infer" or rate == 0.0:
            return x
        if rng is None:
            raise ContractError("training-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        return self._add("dropout", (x,), x.value * mask, lambda g: (g * mask,))

    # losses (per-sample, shape preserved)

    def logistic_loss(self, p: Node, y) -> Node:
        """Per-sample negative log-likelihood of binary labels ``y`` under ``p``.

        Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS]; clamped entries
        pass no gradient and are counted in ``self.saturated``.
        """
        y = np.asarray(y, dtype=DTYPE).reshape(p.shape)
        pv = p.value
        clipped = np.clip(pv, PROB_EPS, 1.0 - PROB_EPS)
        inside = clipped == pv
        self.saturated += int((~inside).sum())
        value = -(y * np.log(clipped) + (1.0 - y) * np.log1p(-clipped))
        dp = np.where(inside, (clipped - y) / (clipped * (1.0 - clipped)), 0.0)
        return self._add("logistic_loss", (p,), value, lambda g: (g * dp,))

    def squared_error(self, pred: Node, y) -> Node:
        y = np.asarray(y, dtype=DTYPE).reshape(pred.shape)
        diff = pred.value - y
        return self._add("squared_error", (pred,), diff * diff, lambda g: (2.0 * g * diff,))

    # reverse pass

    def backward(self, loss: Node):
        """Fill ``params`` gradients with d(loss)/d(param).

        Every parameter in the store is overwritten: those the graph never
        touched receive zeros.  Adjoints of intermediate nodes are released.
        """
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        if self.nodes[loss.id] is not loss:
            raise ContractError("loss node does not belong to this graph")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            if node.grad is None or node.backward_fn is None:
                continue
            for inp, g in zip(node.inputs, node.backward_fn(node.grad)):
                if inp.grad is None:
                    inp.grad = np.array(g, dtype=DTYPE)
                else:
                    inp.grad = inp.grad + g
        if self.params is not None:
            self.params.zero_grad()
            for name, node in self._param_nodes.items():
                if node.grad is not None:
                    self.params.set_grad(name, node.grad.reshape(node.shape))
        for node in self.nodes:
            node.grad = None


def init_dense(params: ParamStore, prefix: str, layer_sizes, input_width, seed,
               zero=False):
    """Allocate ``{prefix}/{i}/W`` and ``{prefix}/{i}/b`` for a chain of dense layers."""
    if not layer_sizes:
        raise ConfigurationError(f"{prefix}: layer_sizes must be nonempty")
    fan_in = input_width
    for i, width in enumerate(layer_sizes):
        if width < 1:
            raise ConfigurationError(f"{prefix}/{i}: layer width must be >= 1")
        wname = f"{prefix}/{i}/W"
        if zero:
            params.add(wname, np.zeros((fan_in, width)))
        else:
            params.add(wname, glorot_uniform(param_rng(seed, wname), fan_in, width))
        params.add(f"{prefix}/{i}/b", np.zeros(width))
        fan_in = width


def mlp_forward(graph: ComputeGraph, x: Node, prefix: str, layer_sizes,
                activation="relu", final_activation=None,
                dropout=0.0, mode="infer", rng=None) -> Node:
    """Chain ``dense -> activation`` over parameters ``{prefix}/{i}/{W,b}``.

    ``final_activation`` defaults to ``activation``; pass ``"identity"`` for a
    pre-logistic head.  Dropout follows every hidden (non-final) activation.
    """
    n_layers = len(layer_sizes)
    if n_layers < 1:
        raise ConfigurationError(f"{prefix}: layer_sizes must be nonempty")
    acts = {"relu": graph.relu, "sigmoid": graph.sigmoid, "identity": graph.identity}
    if final_activation is None:
        final_activation = activation
    h = x
    for i in range(n_layers):
        w = graph.param(f"{prefix}/{i}/W")
        if h.value.ndim != 2 or h.shape[1] != w.shape[0]:
            raise ConfigurationError(
                f"{prefix} layer {i}: input width {h.shape[-1]} but weight expects {w.shape[0]}"
            )
        if w.shape[1] != layer_sizes[i]:
            raise ConfigurationError(
                f"{prefix} layer {i}: weight has width {w.shape[1]}, expected {layer_sizes[i]}"
            )
        h = graph.dense(h, w, graph.param(f"{prefix}/{i}/b"))
        last = i == n_layers - 1
        h = acts[final_activation if last else activation](h)
        if not last and dropout:
            h = graph.dropout(h, dropout, mode, rng)
    return h


def regularization_penalty(graph: ComputeGraph, l1: float, l2: float,
                           names=None) -> Node:
    """``l1 * sum|theta| + l2 * sum theta^2`` over the graph's ParamStore."""
    if l1 < 0 or l2 < 0:
        raise ConfigurationError("regularization coefficients must be >= 0")
    if names is None:
        names = graph.params.names()
    terms = []
    for name in names:
        p = graph.param(name)
        if l1:
            terms.append(graph.scale(graph.sum(graph.abs(p)), l1))
        if l2:
            terms.append(graph.scale(graph.sum(graph.square(p)), l2))
    return graph.add_scalars(terms)
