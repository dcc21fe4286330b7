"""Run configuration: strict YAML parsing into typed sections.

Unknown keys anywhere raise :class:`ConfigError`, as do values of the wrong
type; referenced input paths are validated by the commands that read them.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .routing import AttributeSchema
from .toynet import NetSpec, TrainingConfig


@dataclass
class Paths:
    base_checkpoint: Path
    inventory_dir: Path
    data_dir: Path
    output_dir: Path


@dataclass
class DataConfig:
    sequences_per_combo: int = 2
    length: int = 8
    holdout_fraction: float = 0.25


@dataclass
class RunConfig:
    seed: int
    paths: Paths
    schema: AttributeSchema
    net: NetSpec
    data: DataConfig
    training: TrainingConfig
    strategy: str = "mean"
    rho: float = 1.0

    def combo_keys(self) -> list[dict[str, str]]:
        """Every attribute-value combination, in deterministic order."""
        combos: list[dict[str, str]] = [{}]
        for name, values in self.schema.attributes:
            combos = [dict(c, **{name: v}) for c in combos for v in values]
        return combos


def _require_mapping(node, context: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(node).__name__}")
    return node


def _take(node: dict, context: str, known: set[str]) -> None:
    unknown = sorted(set(node) - known)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")


def _coerce_dataclass(cls, node: dict, context: str):
    known = {f.name for f in fields(cls)}
    _take(node, context, known)
    defaults = cls()
    kwargs = {}
    for key, value in node.items():
        current = getattr(defaults, key)
        if isinstance(value, bool):
            raise ConfigError(f"{context}.{key}: unexpected boolean")
        if isinstance(current, float):
            try:
                kwargs[key] = float(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{context}.{key}: expected a number") from exc
        elif isinstance(current, int):
            if not isinstance(value, int):
                raise ConfigError(f"{context}.{key}: expected an integer")
            kwargs[key] = value
        elif isinstance(current, str):
            kwargs[key] = str(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def _parse_schema(node) -> AttributeSchema:
    if node in (None, "default"):
        return AttributeSchema()
    node = _require_mapping(node, "schema")
    attributes = []
    for name, values in node.items():
        if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
            raise ConfigError(f"schema.{name}: expected a list of value strings")
        attributes.append((str(name), tuple(values)))
    return AttributeSchema(attributes=tuple(attributes))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    raw = _require_mapping(raw, str(path))
    _take(
        raw,
        str(path),
        {"seed", "paths", "schema", "net", "data", "training", "strategy", "rho"},
    )

    if "seed" not in raw or not isinstance(raw["seed"], int):
        raise ConfigError(f"{path}: 'seed' must be an integer")
    paths_node = _require_mapping(raw.get("paths", {}), "paths")
    _take(paths_node, "paths", {"base_checkpoint", "inventory_dir", "data_dir", "output_dir"})
    missing = [
        k
        for k in ("base_checkpoint", "inventory_dir", "data_dir", "output_dir")
        if k not in paths_node
    ]
    if missing:
        raise ConfigError(f"paths: missing keys {missing}")
    base = path.parent
    paths = Paths(
        base_checkpoint=base / str(paths_node["base_checkpoint"]),
        inventory_dir=base / str(paths_node["inventory_dir"]),
        data_dir=base / str(paths_node["data_dir"]),
        output_dir=base / str(paths_node["output_dir"]),
    )

    schema = _parse_schema(raw.get("schema"))
    net = _coerce_dataclass(NetSpec, _require_mapping(raw.get("net", {}) or {}, "net"), "net")
    data = _coerce_dataclass(
        DataConfig, _require_mapping(raw.get("data", {}) or {}, "data"), "data"
    )
    training = _coerce_dataclass(
        TrainingConfig, _require_mapping(raw.get("training", {}) or {}, "training"), "training"
    )

    strategy = raw.get("strategy", "mean")
    if strategy not in ("mean", "weighted", "sum"):
        raise ConfigError(f"strategy must be mean/weighted/sum, got {strategy!r}")
    rho = float(raw.get("rho", 1.0))
    return RunConfig(
        seed=raw["seed"],
        paths=paths,
        schema=schema,
        net=net,
        data=data,
        training=training,
        strategy=strategy,
        rho=rho,
    )
