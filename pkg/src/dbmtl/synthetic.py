"""Synthetic impressions generated from a known structural causal model.

Every target is driven by a shared latent *quality* score ``q(x)``, a
target-specific score ``u_k(x)`` and the realized labels of its parents::

    binary:      P(t_k = 1 | pa, x) = gate * sigmoid(b_k + a_k q + c_k u_k + sum_p w_kp t_p)
    continuous:  log T_k ~ Normal(mu_k + a_k q + c_k u_k + sum_p w_kp t_p, sigma_k^2)
                 label   = gate * ln(1 + T_k)

``q`` and each ``u_k`` are fixed linear functions of the features: a
scalar effect per categorical id plus a weight per dense feature, drawn
once from ``effects_seed`` and normalized to zero mean and unit variance.
The intercept ``b_k`` is calibrated so that the parent-free part of the
equation has positive rate ``rate`` over the feature distribution; for a
root target (such as the gate) that is its marginal.  For a gated target
the rate is conditional on the gate being on, and is calibrated on a fixed
sample of 2^17 feature rows drawn from ``effects_seed``.

Besides labels the generator stores per-sample ground truth:

``cond/<t>``      P(t = 1 | realized parents and gate, x), or E[label | ...]
``marginal/<t>``  P(t = 1 | x) (or E[label | x]), parents summed out
``variance/<t>``  Var[label | x]
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.signal import fftconvolve
from scipy.special import expit

from .data import Dataset, FeatureSchema, LabelSpec, apply_gating, transform_stay_time
from .errors import ConfigurationError, StructureError
from .structure import format_edge, parse_edge, topological_order

_GRID_STEP = 1e-3
_CALIBRATION_ROWS = 1 << 17
_CALIBRATION_STREAM = 0xCA1
_HERMITE = np.polynomial.hermite_e.hermegauss(64)


@dataclass(frozen=True)
class SyntheticTarget:
    name: str
    kind: str = "binary"
    rate: float = 0.5             # binary only
    mu: float = 0.0               # continuous only: mean of log stay time
    sigma: float = 1.0            # continuous only
    quality_coef: float = 1.0
    own_coef: float = 0.5
    parent_coefs: dict = field(default_factory=dict)
    gated_by: str | None = None

    def to_json(self):
        out = {"name": self.name, "kind": self.kind,
               "quality_coef": self.quality_coef, "own_coef": self.own_coef}
        if self.kind == "binary":
            out["rate"] = self.rate
        else:
            out.update(mu=self.mu, sigma=self.sigma)
        if self.parent_coefs:
            out["parent_coefs"] = dict(self.parent_coefs)
        if self.gated_by:
            out["gated_by"] = self.gated_by
        return out


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    categoricals: tuple[tuple[str, int], ...]
    denses: tuple[str, ...]
    targets: tuple[SyntheticTarget, ...]
    edges: tuple[tuple[str, str], ...] = ()
    gate: str | None = None
    effects_seed: int = 0
    days: int = 16

    def __post_init__(self):
        names = [t.name for t in self.targets]
        if not names or len(set(names)) != len(names):
            raise ConfigurationError("synthetic targets must be nonempty and uniquely named")
        kinds = {t.name: t.kind for t in self.targets}
        for t in self.targets:
            if t.kind not in ("binary", "continuous"):
                raise ConfigurationError(f"target {t.name!r}: unknown kind {t.kind!r}")
            if t.kind == "binary" and not 0.0 <= t.rate <= 1.0:
                raise ConfigurationError(f"target {t.name!r}: rate must lie in [0, 1]")
            if t.kind == "continuous" and t.sigma <= 0:
                raise ConfigurationError(f"target {t.name!r}: sigma must be > 0")
            if t.gated_by is not None and t.gated_by != self.gate:
                raise ConfigurationError(f"target {t.name!r} is gated by a non-gate target")
            for p in t.parent_coefs:
                if (p, t.name) not in self.edges:
                    raise ConfigurationError(f"coefficient for non-edge {p}->{t.name}")
        try:
            topological_order(names, self.edges)
        except (StructureError, KeyError) as exc:
            raise ConfigurationError(f"true DAG is invalid: {exc}") from exc
        for a, b in self.edges:
            if a not in kinds or b not in kinds or a == b:
                raise ConfigurationError(f"bad edge {a}->{b}")
            if kinds[a] != "binary":
                raise ConfigurationError(f"continuous target {a!r} cannot be a parent")
        if self.gate is not None:
            if kinds.get(self.gate) != "binary":
                raise ConfigurationError("gate must be a declared binary target")
            if any(b == self.gate for _, b in self.edges):
                raise ConfigurationError("gate must be a root of the true DAG")
        if self.days < 1:
            raise ConfigurationError("days must be >= 1")
        if not self.categoricals and not self.denses:
            raise ConfigurationError("need at least one feature")

    # --- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "categoricals": [{"name": n, "vocab": v} for n, v in self.categoricals],
            "denses": list(self.denses),
            "targets": [t.to_json() for t in self.targets],
            "edges": [format_edge(e) for e in self.edges],
            "gate": self.gate,
            "effects_seed": self.effects_seed,
            "days": self.days,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        try:
            targets = tuple(
                SyntheticTarget(
                    name=t["name"], kind=t.get("kind", "binary"),
                    rate=float(t.get("rate", 0.5)), mu=float(t.get("mu", 0.0)),
                    sigma=float(t.get("sigma", 1.0)),
                    quality_coef=float(t.get("quality_coef", 1.0)),
                    own_coef=float(t.get("own_coef", 0.5)),
                    parent_coefs={k: float(v) for k, v in t.get("parent_coefs", {}).items()},
                    gated_by=t.get("gated_by"),
                )
                for t in obj["targets"]
            )
            return cls(
                categoricals=tuple((c["name"], int(c["vocab"])) for c in obj.get("categoricals", [])),
                denses=tuple(obj.get("denses", [])),
                targets=targets,
                edges=tuple(parse_edge(e) for e in obj.get("edges", [])),
                gate=obj.get("gate"),
                effects_seed=int(obj.get("effects_seed", 0)),
                days=int(obj.get("days", 16)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"malformed synthetic spec: {exc}") from exc

    # --- derived quantities -------------------------------------------

    @property
    def target_names(self) -> list[str]:
        return [t.name for t in self.targets]

    def target(self, name) -> SyntheticTarget:
        for t in self.targets:
            if t.name == name:
                return t
        raise KeyError(name)

    def parents(self, name) -> list[str]:
        return sorted(a for a, b in self.edges if b == name)

    @property
    def order(self) -> list[str]:
        return topological_order(self.target_names, self.edges)

    def schema(self) -> FeatureSchema:
        return FeatureSchema(
            categoricals=self.categoricals,
            denses=self.denses,
            labels=tuple(LabelSpec(t.name, t.kind, t.gated_by) for t in self.targets),
            timestamp="timestamp",
        )

    @cached_property
    def _effects(self):
        """Raw (cat tables, dense weights) for 'quality' and each target."""
        rng = np.random.default_rng(self.effects_seed)
        out = {}
        for key in ["quality"] + self.target_names:
            tables = [rng.standard_normal(v) for _, v in self.categoricals]
            weights = rng.standard_normal(len(self.denses))
            out[key] = _normalize(tables, weights)
        return out

    def score_components(self, name):
        """Per-feature categorical tables and dense weights of ``a q + c u``."""
        t = self.target(name)
        qt, qw = self._effects["quality"]
        ut, uw = self._effects[name]
        tables = [t.quality_coef * a + t.own_coef * b for a, b in zip(qt, ut)]
        return tables, t.quality_coef * qw + t.own_coef * uw

    def score(self, name, categorical, dense) -> np.ndarray:
        tables, weights = self.score_components(name)
        s = dense @ weights if len(weights) else np.zeros(len(categorical))
        for j, table in enumerate(tables):
            s = s + table[categorical[:, j]]
        return s

    def quality(self, categorical, dense) -> np.ndarray:
        tables, weights = self._effects["quality"]
        s = dense @ weights if len(weights) else np.zeros(len(categorical))
        for j, table in enumerate(tables):
            s = s + table[categorical[:, j]]
        return s

    @cached_property
    def _calibration_rows(self):
        """Fixed feature sample for rates that are conditional on the gate."""
        rng = np.random.default_rng([self.effects_seed, _CALIBRATION_STREAM])
        n = _CALIBRATION_ROWS
        cat = np.column_stack([rng.integers(0, v, n) for _, v in self.categoricals]) \
            if self.categoricals else np.zeros((n, 0), dtype=np.int64)
        return cat, rng.standard_normal((n, len(self.denses)))

    def _gate_weights(self, gate_intercept):
        cat, dense = self._calibration_rows
        return expit(gate_intercept + self.score(self.gate, cat, dense))

    @cached_property
    def intercepts(self) -> dict[str, float]:
        out = {}
        # the gate is a root, so it is calibrated before anything it gates
        for t in sorted(self.targets, key=lambda t: t.gated_by is not None):
            if t.kind != "binary":
                out[t.name] = t.mu
            elif t.rate == 0.0:
                out[t.name] = -np.inf
            elif t.rate == 1.0:
                out[t.name] = np.inf
            elif t.gated_by is None:
                dist = self.score_distribution(t.name)
                out[t.name] = brentq(lambda b: _mean_sigmoid(b, *dist) - t.rate, -60, 60,
                                     xtol=1e-12)
            else:
                w = self._gate_weights(out[self.gate])
                s = self.score(t.name, *self._calibration_rows)
                if not w.sum() > 0:
                    out[t.name] = 0.0  # gate never opens; the rate is moot
                    continue
                out[t.name] = brentq(lambda b: w @ expit(b + s) / w.sum() - t.rate, -60, 60,
                                     xtol=1e-12)
        return out

    def score_distribution(self, name):
        """Distribution of the score as (grid, probabilities, dense sd)."""
        tables, weights = self.score_components(name)
        return _discrete_sum_distribution(tables) + (float(np.sqrt(np.sum(weights**2))),)

    def marginal_rate(self, name) -> float:
        """Configured-rate check: P(t = 1) of the parent-free equation over the
        feature distribution, conditional on the gate for gated targets."""
        b = self.intercepts[name]
        if np.isinf(b):
            return float(b > 0)
        if self.target(name).gated_by is None:
            return _mean_sigmoid(b, *self.score_distribution(name))
        w = self._gate_weights(self.intercepts[self.gate])
        return float(w @ expit(b + self.score(name, *self._calibration_rows)) / w.sum())

    def with_targets(self, **changes) -> "SyntheticSpec":
        """Copy with per-target field overrides: ``with_targets(ctr={'rate': 0})``."""
        targets = tuple(replace(t, **changes.get(t.name, {})) for t in self.targets)
        return replace(self, targets=targets)


def _normalize(tables, weights):
    # ids are uniform, so np.var over a table is the variance it contributes
    var = sum(t.var() for t in tables) + float(np.sum(weights**2))
    scale = 1.0 / np.sqrt(var) if var > 0 else 1.0
    return [(t - t.mean()) * scale for t in tables], weights * scale


def _discrete_sum_distribution(tables):
    """Distribution of sum_f table_f[uniform id] binned on a fine grid."""
    if not tables:
        return np.zeros(1), np.ones(1)
    lo = sum(t.min() for t in tables)
    pmf = np.ones(1)
    for t in tables:
        idx = np.round((t - t.min()) / _GRID_STEP).astype(int)
        h = np.bincount(idx) / len(t)
        pmf = fftconvolve(pmf, h)
    pmf = np.clip(pmf, 0.0, None)
    pmf /= pmf.sum()
    grid = lo + _GRID_STEP * np.arange(len(pmf))
    keep = pmf > 1e-15
    return grid[keep], pmf[keep]


def _gauss_expect(fn, loc, sd):
    """E[fn(loc + sd Z)] for standard normal Z, vectorized over ``loc``."""
    nodes, weights = _HERMITE
    vals = fn(np.asarray(loc)[..., None] + sd * nodes)
    return vals @ weights / np.sqrt(2.0 * np.pi)


def _mean_sigmoid(b, grid, pmf, sd):
    return float(pmf @ _gauss_expect(expit, b + grid, sd))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _stay_moments(loc, sigma):
    """E and E^2-moment of ln(1 + exp(S)), S ~ Normal(loc, sigma^2)."""
    m1 = _gauss_expect(_softplus, loc, sigma)
    m2 = _gauss_expect(lambda v: _softplus(v) ** 2, loc, sigma)
    return m1, m2


def _structural(spec, name, scores, labels):
    """Pre-gate logit (binary) or log-stay mean (continuous)."""
    t = spec.target(name)
    z = spec.intercepts[name] + scores[name]
    for p in spec.parents(name):
        z = z + t.parent_coefs.get(p, 1.0) * labels[p]
    return z


def ground_truth(spec: SyntheticSpec, categorical, dense, labels) -> dict[str, np.ndarray]:
    """Per-sample conditionals, marginals and conditional variances."""
    n = len(categorical)
    scores = {t: spec.score(t, categorical, dense) for t in spec.target_names}
    out = {}

    def cond_value(name, lab):
        t = spec.target(name)
        z = _structural(spec, name, scores, lab)
        g = lab[t.gated_by] if t.gated_by else 1.0
        if t.kind == "binary":
            return g * expit(z), None
        m1, m2 = _stay_moments(z, t.sigma)
        return g * m1, g * m2

    for name in spec.target_names:
        out[f"cond/{name}"] = cond_value(name, labels)[0] * np.ones(n)

    # Sum out every binary target that is a parent or a gate.
    latent = [t for t in spec.order
              if any(a == t for a, _ in spec.edges) or t == spec.gate]
    marg = {t: np.zeros(n) for t in spec.target_names}
    second = {t: np.zeros(n) for t in spec.target_names}
    for config in itertools.product((0.0, 1.0), repeat=len(latent)):
        lab = {t: np.full(n, v) for t, v in zip(latent, config)}
        weight = np.ones(n)
        for t, v in zip(latent, config):
            p1, _ = cond_value(t, lab)
            weight = weight * (p1 if v == 1.0 else 1.0 - p1)
        for name in spec.target_names:
            if name in latent:
                marg[name] += weight * lab[name]
                second[name] += weight * lab[name]
            else:
                m1, m2 = cond_value(name, lab)
                marg[name] += weight * m1
                second[name] += weight * (m1 if m2 is None else m2)
    for name in spec.target_names:
        out[f"marginal/{name}"] = marg[name]
        out[f"variance/{name}"] = np.clip(second[name] - marg[name] ** 2, 0.0, None)
    return out


def generate_synthetic(spec: SyntheticSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` impressions with labels, timestamps and ground truth."""
    if n < 1:
        raise ConfigurationError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    categorical = np.column_stack(
        [rng.integers(0, v, size=n) for _, v in spec.categoricals]
    ) if spec.categoricals else np.zeros((n, 0), dtype=np.int64)
    dense = rng.standard_normal((n, len(spec.denses)))
    scores = {t: spec.score(t, categorical, dense) for t in spec.target_names}
    labels: dict[str, np.ndarray] = {}
    for name in spec.order:
        t = spec.target(name)
        z = _structural(spec, name, scores, labels)
        if t.kind == "binary":
            labels[name] = (rng.random(n) < expit(z)).astype(np.float64)
        else:
            log_stay = z + t.sigma * rng.standard_normal(n)
            labels[name] = transform_stay_time(np.exp(log_stay))
        if t.gated_by:
            labels[name] = apply_gating(
                {name: labels[name], t.gated_by: labels[t.gated_by]},
                t.gated_by, [LabelSpec(name, t.kind, t.gated_by)],
            )[name]
    day = rng.integers(0, spec.days, size=n)
    second = rng.integers(0, 86400, size=n)
    timestamp = day * 86400 + second
    truth = ground_truth(spec, categorical, dense, labels)
    order = np.argsort(timestamp, kind="stable")
    return Dataset(
        spec.schema(),
        categorical[order],
        dense[order],
        {k: v[order] for k, v in labels.items()},
        timestamp[order],
        {k: v[order] for k, v in truth.items()},
    )


def load_synthetic_spec(path) -> SyntheticSpec:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    return SyntheticSpec.from_json(obj)


def _features(n_cat=4, vocab=40, n_dense=4):
    cats = tuple((f"c{i}", vocab) for i in range(n_cat))
    dens = tuple(f"d{i}" for i in range(n_dense))
    return cats, dens


def preset(name: str) -> SyntheticSpec:
    """Named specs used by the demos and the acceptance experiments.

    ``chain3``   gate t1 -> {t2, t3}, with t3 sparse (~3% given the gate)
    ``pair``     gate t1 -> t2
    ``entropy``  two ungated binaries with rates 0.4 and 0.05, no direct edge
    ``live6``    ctr gate -> {cgr, cfr, ccr, clr, ast}, live-room flavoured
    """
    cats, dens = _features()
    if name == "chain3":
        return SyntheticSpec(cats, dens, (
            SyntheticTarget("t1", rate=0.3, quality_coef=1.5, own_coef=0.5),
            SyntheticTarget("t2", rate=0.3, quality_coef=1.0, own_coef=1.0,
                            parent_coefs={"t1": 0.0}, gated_by="t1"),
            SyntheticTarget("t3", rate=0.03, quality_coef=1.5, own_coef=0.5,
                            parent_coefs={"t1": 0.0}, gated_by="t1"),
        ), edges=(("t1", "t2"), ("t1", "t3")), gate="t1", effects_seed=11)
    if name == "pair":
        return SyntheticSpec(cats, dens, (
            SyntheticTarget("t1", rate=0.3, quality_coef=1.5, own_coef=0.5),
            SyntheticTarget("t2", rate=0.1, quality_coef=1.5, own_coef=0.5,
                            parent_coefs={"t1": 0.0}, gated_by="t1"),
        ), edges=(("t1", "t2"),), gate="t1", effects_seed=12)
    if name == "entropy":
        return SyntheticSpec(cats, dens, (
            SyntheticTarget("a", rate=0.4, quality_coef=1.5, own_coef=0.5),
            SyntheticTarget("b", rate=0.05, quality_coef=1.5, own_coef=0.5),
        ), effects_seed=13)
    if name == "live6":
        gated = {"parent_coefs": {"ctr": 0.0}, "gated_by": "ctr"}
        return SyntheticSpec(cats, dens, (
            SyntheticTarget("ctr", rate=0.3, quality_coef=1.5, own_coef=0.5),
            SyntheticTarget("cgr", rate=0.4, quality_coef=1.0, own_coef=0.8, **gated),
            SyntheticTarget("cfr", rate=0.05, quality_coef=1.2, own_coef=0.6, **gated),
            SyntheticTarget("ccr", rate=0.1, quality_coef=1.0, own_coef=0.6, **gated),
            SyntheticTarget("clr", rate=0.15, quality_coef=1.0, own_coef=0.6, **gated),
            SyntheticTarget("ast", kind="continuous", mu=3.0, sigma=1.0,
                            quality_coef=0.8, own_coef=0.4, **gated),
        ), edges=tuple(("ctr", t) for t in ("cgr", "cfr", "ccr", "clr", "ast")),
            gate="ctr", effects_seed=14)
    raise KeyError(f"unknown preset {name!r}")
