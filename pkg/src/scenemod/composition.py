"""Parameter-space merging of routed expert modules.

Per attribute, the routed weights turn that attribute's modules into one
task vector (a named store of parameter deltas). Task vectors are then
combined into composed parameters theta_c = theta_0 + sum_i lambda_i * tau_i.
Supported aggregation strategies:

  mean      lambda_i = 1/N with hard (one-hot) routing
  weighted  lambda_i = 1/N with soft routing (rho < 1)
  sum       lambda_i = 1, deliberately unnormalized
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .adapters import (
    LoraAdapter,
    ScaleShiftAdapter,
    absorb_scale_shift,
    lora_delta,
    ssf_forward,
    ssf_task_vector,
)
from .errors import ConfigError, NumericError, ShapeError
from .routing import AttributeSchema, ModuleInventory, RoutingWeights
from .tensor import Array, ParameterStore, conv2d

STRATEGIES = ("mean", "weighted", "sum")
LAMBDA_SUM_TOL = 1e-12


@dataclass
class TaskVector:
    """Named parameter deltas contributed by one attribute's routed modules."""

    deltas: ParameterStore
    attribute: str
    weights: dict[str, float]


@dataclass
class CompositionPlan:
    """Aggregation strategy plus the per-attribute coefficients lambda_i."""

    strategy: str
    lambdas: dict[str, float]
    rho: float = 1.0
    routing: RoutingWeights = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.strategy == "sum":
            if any(lam != 1.0 for lam in self.lambdas.values()):
                raise NumericError("strategy 'sum' requires lambda_i = 1 for every attribute")
        else:
            total = sum(self.lambdas.values())
            if abs(total - 1.0) > LAMBDA_SUM_TOL:
                raise NumericError(
                    f"strategy {self.strategy!r} requires lambdas summing to 1, got {total!r}"
                )

    @classmethod
    def uniform(cls, attributes: Sequence[str], strategy: str = "mean", rho: float = 1.0,
                routing: RoutingWeights | None = None) -> "CompositionPlan":
        n = len(attributes)
        if strategy == "sum":
            lambdas = {a: 1.0 for a in attributes}
        else:
            share = float(Fraction(1, n))
            lambdas = {a: share for a in attributes}
        return cls(strategy=strategy, lambdas=lambdas, rho=rho, routing=routing or {})


def attribute_task_vector(
    inventory: ModuleInventory,
    attribute: str,
    weights: dict[str, float],
    base: ParameterStore,
) -> TaskVector:
    """Blend one attribute's modules into a single task vector.

    Linear-layer deltas are the weighted sum of the modules' B @ A products;
    convolution deltas come from absorbing the weighted scale-and-shift
    parameters into the base conv weights and subtracting the base.
    """
    values = inventory.schema.values(attribute)
    if set(weights) != set(values):
        raise ConfigError(
            f"weights {sorted(weights)} must cover values {sorted(values)} "
            f"of attribute {attribute!r}"
        )
    modules = [inventory.get(attribute, v) for v in values]
    target_sets = {tuple(m.targets()) for m in modules}
    if len(target_sets) != 1:
        raise ConfigError(
            f"modules of attribute {attribute!r} adapt different layers: {target_sets}"
        )

    deltas = ParameterStore()
    for target in modules[0].targets():
        adapters = [m.adapters[target] for m in modules]
        lams = [weights[m.value] for m in modules]
        if all(isinstance(a, LoraAdapter) for a in adapters):
            name = f"{target}.W"
            _require(base, name, (adapters[0].out_dim, adapters[0].in_dim))
            delta = np.zeros_like(base[name])
            for adapter, lam in zip(adapters, lams):
                if lam != 0.0:
                    delta += lam * lora_delta(adapter)
            deltas[name] = delta
        elif all(isinstance(a, ScaleShiftAdapter) for a in adapters):
            w_name, b_name = f"{target}.W", f"{target}.b"
            if w_name not in base or b_name not in base:
                raise ConfigError(f"base store lacks conv parameters for {target!r}")
            weighted = [(a.gamma, a.beta, lam) for a, lam in zip(adapters, lams)]
            tau_w, tau_b = ssf_task_vector(weighted, base[w_name], base[b_name])
            deltas[w_name] = tau_w
            deltas[b_name] = tau_b
        else:
            raise ConfigError(f"mixed adapter kinds on layer {target!r}")
    return TaskVector(deltas=deltas, attribute=attribute, weights=dict(weights))


def _require(base: ParameterStore, name: str, shape: tuple[int, ...]) -> None:
    if name not in base:
        raise ConfigError(f"base store lacks parameter {name!r}")
    if base[name].shape != shape:
        raise ShapeError(f"{name}: base shape {base[name].shape} vs adapter {shape}")


def compose(
    theta0: ParameterStore, taus: Sequence[TaskVector], plan: CompositionPlan
) -> ParameterStore:
    """theta_c = theta_0 + sum_i lambda_i * tau_i.

    Parameters without any delta pass through bit-identically, as do
    parameters whose accumulated delta is exactly zero.
    """
    attrs = [t.attribute for t in taus]
    if len(set(attrs)) != len(attrs):
        raise ConfigError(f"duplicate attribute in task vectors: {attrs}")
    if set(attrs) != set(plan.lambdas):
        raise ConfigError(
            f"plan covers {sorted(plan.lambdas)} but task vectors cover {sorted(attrs)}"
        )
    for tau in taus:
        for name in tau.deltas.names():
            if name not in theta0:
                raise ConfigError(f"delta names unknown parameter {name!r}")
            if tau.deltas[name].shape != theta0[name].shape:
                raise ShapeError(
                    f"{name}: delta shape {tau.deltas[name].shape} "
                    f"vs base {theta0[name].shape}"
                )

    composed = ParameterStore()
    for name, value in theta0.items():
        delta = np.zeros_like(value)
        for tau in taus:
            if name in tau.deltas:
                delta += plan.lambdas[tau.attribute] * tau.deltas[name]
        if np.any(delta):
            composed[name] = value + delta
        else:
            composed[name] = value.copy()
    return composed


def merged_forward_check(
    theta0: ParameterStore,
    modules: Sequence,
    weights: dict[str, float],
    x: Array,
    stride: int = 1,
    padding: int = 0,
) -> float:
    """Max layer-local gap between composed-parameter and output-averaged paths.

    For each adapted layer, with the layer input taken from the unadapted
    base forward, compares (a) one pass through the weight-space blend of
    the modules against (b) the weighted average of the individual modules'
    outputs. Both are exactly equal in real arithmetic; the return value is
    the worst floating-point discrepancy, useful as a merge soundness probe.

    ``modules`` are AdapterModule instances of a single attribute and
    ``weights`` maps module value -> weight. ``x`` is the network input used
    to derive conv-layer inputs; linear layers are probed with flattened
    conv output.
    """
    lams = [weights[m.value] for m in modules]
    worst = 0.0
    targets = modules[0].targets()
    layer_inputs: dict[str, Array] = {}

    for target in targets:
        adapters = [m.adapters[target] for m in modules]
        if isinstance(adapters[0], ScaleShiftAdapter):
            w0, b0 = theta0[f"{target}.W"], theta0[f"{target}.b"]
            base_out = conv2d(x, w0, b0, stride=stride, padding=padding)
            weighted = [(a.gamma, a.beta, lam) for a, lam in zip(adapters, lams)]
            w_star, b_star = absorb_scale_shift(weighted, w0, b0)
            merged = conv2d(x, w_star, b_star, stride=stride, padding=padding)
            averaged = np.zeros_like(base_out)
            for adapter, lam in zip(adapters, lams):
                averaged += lam * ssf_forward(adapter, base_out)
            worst = max(worst, float(np.max(np.abs(merged - averaged))))
            layer_inputs["_flat"] = np.maximum(base_out, 0.0).ravel()
        else:
            w0 = theta0[f"{target}.W"]
            b_name = f"{target}.b"
            b0 = theta0[b_name] if b_name in theta0 else np.zeros(w0.shape[0])
            v = layer_inputs.get("_flat")
            if v is None or v.shape[0] != w0.shape[1]:
                rng = np.random.default_rng(0)
                v = rng.standard_normal(w0.shape[1])
            w_merged = w0.copy()
            for adapter, lam in zip(adapters, lams):
                w_merged += lam * lora_delta(adapter)
            merged = w_merged @ v + b0
            averaged = np.zeros_like(merged)
            for adapter, lam in zip(adapters, lams):
                averaged += lam * (w0 @ v + b0 + adapter.B @ (adapter.A @ v))
            worst = max(worst, float(np.max(np.abs(merged - averaged))))
            layer_inputs["_flat"] = np.maximum(merged, 0.0)
    return worst
