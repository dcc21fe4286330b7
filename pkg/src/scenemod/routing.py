"""Attribute schema, module inventory, routing strategies, and classifiers.

Routing weights for one attribute put a share ``rho`` on the value selected
by the operator (the domain expert) and split the remainder evenly over the
other values; ``rho = 1`` is hard routing. Weights are computed in exact
decimal arithmetic so that e.g. rho=0.8 over three values yields the literal
floats {0.8, 0.1, 0.1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Mapping, Union

from .adapters import LoraAdapter, ScaleShiftAdapter
from .errors import ConfigError, NumericError
from .tensor import ParameterStore

RoutingQuery = Mapping[str, str]
RoutingWeights = dict[str, dict[str, float]]
Adapter = Union[LoraAdapter, ScaleShiftAdapter]

DEFAULT_ATTRIBUTES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("lighting", ("good", "bad")),
    ("viewpoint", ("high", "medium", "low")),
    ("occupancy", ("low", "medium", "high")),
    ("location", ("indoor", "outdoor")),
    ("motion", ("moving", "static")),
)

BRIGHTNESS_THRESHOLD = 70.0
OCCUPANCY_CONFIDENCE = 0.2
OCCUPANCY_LOW_MAX = 10
OCCUPANCY_MEDIUM_MAX = 40


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attributes with their discrete value sets."""

    attributes: tuple[tuple[str, tuple[str, ...]], ...] = DEFAULT_ATTRIBUTES

    def __post_init__(self):
        seen = set()
        for name, values in self.attributes:
            if name in seen:
                raise ConfigError(f"duplicate attribute {name!r}")
            seen.add(name)
            if len(values) < 1:
                raise ConfigError(f"attribute {name!r} has no values")
            if len(set(values)) != len(values):
                raise ConfigError(f"attribute {name!r} has duplicate values")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.attributes)

    def values(self, attribute: str) -> tuple[str, ...]:
        for name, values in self.attributes:
            if name == attribute:
                return values
        raise ConfigError(f"unknown attribute {attribute!r}")

    def module_keys(self) -> list[tuple[str, str]]:
        return [(n, v) for n, vals in self.attributes for v in vals]

    def validate_query(self, query: RoutingQuery) -> None:
        missing = [n for n in self.names if n not in query]
        extra = [k for k in query if k not in self.names]
        if missing or extra:
            raise ConfigError(
                f"query must set every attribute exactly once "
                f"(missing={missing}, unknown={extra})"
            )
        for name in self.names:
            if query[name] not in self.values(name):
                raise ConfigError(
                    f"invalid value {query[name]!r} for attribute {name!r}; "
                    f"choose from {self.values(name)}"
                )


def default_schema() -> AttributeSchema:
    return AttributeSchema()


@dataclass
class AdapterModule:
    """One trained expert: the adapters of a single (attribute, value) pair."""

    attribute: str
    value: str
    adapters: dict[str, Adapter] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str]:
        return (self.attribute, self.value)

    def targets(self) -> list[str]:
        return sorted(self.adapters)

    def to_store(self) -> ParameterStore:
        store = ParameterStore()
        prefix = f"{self.attribute}.{self.value}"
        for target, adapter in self.adapters.items():
            if isinstance(adapter, LoraAdapter):
                store[f"{prefix}.{target}.A"] = adapter.A
                store[f"{prefix}.{target}.B"] = adapter.B
            else:
                store[f"{prefix}.{target}.gamma"] = adapter.gamma
                store[f"{prefix}.{target}.beta"] = adapter.beta
        return store

    @classmethod
    def from_store(cls, store: ParameterStore) -> "AdapterModule":
        parts_by_target: dict[tuple[str, str, str], dict[str, object]] = {}
        for name, value in store.items():
            fields = name.split(".")
            if len(fields) != 4:
                raise ConfigError(f"unexpected adapter parameter name {name!r}")
            attribute, attr_value, target, param = fields
            parts_by_target.setdefault((attribute, attr_value, target), {})[param] = value
        if not parts_by_target:
            raise ConfigError("adapter checkpoint is empty")
        keys = {(a, v) for a, v, _ in parts_by_target}
        if len(keys) != 1:
            raise ConfigError(f"adapter checkpoint mixes modules: {sorted(keys)}")
        (attribute, attr_value) = keys.pop()
        module = cls(attribute=attribute, value=attr_value)
        for (_, _, target), params in parts_by_target.items():
            if set(params) == {"A", "B"}:
                module.adapters[target] = LoraAdapter(
                    target=target, A=params["A"], B=params["B"]
                )
            elif set(params) == {"gamma", "beta"}:
                module.adapters[target] = ScaleShiftAdapter(
                    target=target, gamma=params["gamma"], beta=params["beta"]
                )
            else:
                raise ConfigError(
                    f"adapter {target!r} has unexpected parameters {sorted(params)}"
                )
        return module


class ModuleInventory:
    """The full bank of expert modules, one per (attribute, value)."""

    def __init__(self, schema: AttributeSchema):
        self.schema = schema
        self._modules: dict[tuple[str, str], AdapterModule] = {}

    def add(self, module: AdapterModule) -> None:
        if module.key in self._modules:
            raise ConfigError(f"duplicate module {module.key}")
        if module.value not in self.schema.values(module.attribute):
            raise ConfigError(f"module {module.key} not in schema")
        self._modules[module.key] = module

    def get(self, attribute: str, value: str) -> AdapterModule:
        try:
            return self._modules[(attribute, value)]
        except KeyError:
            raise ConfigError(f"no module for ({attribute!r}, {value!r})") from None

    def modules(self) -> list[AdapterModule]:
        return [self._modules[k] for k in sorted(self._modules)]

    def __len__(self) -> int:
        return len(self._modules)

    def validate_complete(self) -> None:
        missing = [k for k in self.schema.module_keys() if k not in self._modules]
        if missing:
            raise ConfigError(f"inventory is missing modules: {missing}")


def soft_route(schema: AttributeSchema, query: RoutingQuery, rho: float) -> RoutingWeights:
    """Per-attribute weights: rho on the selected value, the rest split evenly.

    Requires 0 < rho <= 1; for rho < 1 every attribute needs at least two
    values (otherwise there is nothing to share the remainder with).
    """
    schema.validate_query(query)
    rho = float(rho)
    if not 0.0 < rho <= 1.0:
        raise NumericError(f"rho must be in (0, 1], got {rho!r}")
    rho_exact = Fraction(Decimal(repr(rho)))
    weights: RoutingWeights = {}
    for name, values in schema.attributes:
        if len(values) == 1:
            if rho < 1.0:
                raise NumericError(
                    f"rho < 1 needs at least two values for attribute {name!r}"
                )
            weights[name] = {values[0]: 1.0}
            continue
        rest = (1 - rho_exact) / (len(values) - 1)
        weights[name] = {
            v: float(rho_exact) if v == query[name] else float(rest) for v in values
        }
    return weights


def hard_route(schema: AttributeSchema, query: RoutingQuery) -> RoutingWeights:
    """One-hot weights on the selected values; identical to soft_route(rho=1)."""
    return soft_route(schema, query, 1.0)


def opposite_route(schema: AttributeSchema, query: RoutingQuery) -> dict[str, str]:
    """Replace every selected value with its cyclic successor in schema order.

    For two-valued attributes this is the flip; the successor rule makes the
    choice deterministic for larger value sets.
    """
    schema.validate_query(query)
    flipped = {}
    for name, values in schema.attributes:
        if len(values) == 1:
            raise ConfigError(f"attribute {name!r} has no opposite value")
        idx = values.index(query[name])
        flipped[name] = values[(idx + 1) % len(values)]
    return flipped


def flip_attribute(schema: AttributeSchema, query: RoutingQuery, attribute: str) -> dict[str, str]:
    """Flip a single attribute to its cyclic successor, keeping the rest."""
    schema.validate_query(query)
    values = schema.values(attribute)
    if len(values) == 1:
        raise ConfigError(f"attribute {attribute!r} has no opposite value")
    out = dict(query)
    out[attribute] = values[(values.index(query[attribute]) + 1) % len(values)]
    return out


def all_modules_route(schema: AttributeSchema) -> RoutingWeights:
    """Uniform weight over every value of every attribute."""
    weights: RoutingWeights = {}
    for name, values in schema.attributes:
        share = Fraction(1, len(values))
        weights[name] = {v: float(share) for v in values}
    return weights


def validate_weights(schema: AttributeSchema, weights: RoutingWeights) -> None:
    for name, values in schema.attributes:
        if name not in weights or set(weights[name]) != set(values):
            raise ConfigError(f"weights must cover every value of {name!r}")
        total = sum(weights[name].values())
        if abs(total - 1.0) > 1e-12:
            raise NumericError(f"weights for {name!r} sum to {total!r}")
        if any(w < 0 for w in weights[name].values()):
            raise NumericError(f"negative weight for {name!r}")


def classify_lighting(mean_brightness: float) -> str:
    """Threshold the mean HSV brightness at 70 (boundary counts as good)."""
    v = float(mean_brightness)
    if not 0.0 <= v <= 255.0:
        raise NumericError(f"brightness {v!r} outside [0, 255]")
    return "bad" if v < BRIGHTNESS_THRESHOLD else "good"


def classify_occupancy(confidences) -> str:
    """Band on the number of detections with confidence above 0.2.

    Up to 10 is low, 11..40 is medium, more than 40 is high.
    """
    n = sum(1 for c in confidences if float(c) > OCCUPANCY_CONFIDENCE)
    if n <= OCCUPANCY_LOW_MAX:
        return "low"
    if n <= OCCUPANCY_MEDIUM_MAX:
        return "medium"
    return "high"
