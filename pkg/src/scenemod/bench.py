"""End-to-end benchmark: route -> merge -> detect -> associate -> score.

For every scenario (one attribute query) the requested selection and
aggregation strategy produce composed parameters; the toy network then runs
as a per-frame detector with greedy nearest-center linking, and the
predictions are scored against the generated ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .composition import CompositionPlan, attribute_task_vector, compose
from .detect import GridSpec, NearestCenterTracker, decode_detections
from .errors import ConfigError
from .metrics import TrackingMetrics, evaluate
from .routing import (
    ModuleInventory,
    RoutingWeights,
    all_modules_route,
    opposite_route,
    soft_route,
)
from .synth import SyntheticSequence, generate_sequence
from .tensor import ParameterStore
from .toynet import NetSpec, ToyNetwork, forward

SELECTIONS = ("expert", "all", "opposite")


@dataclass
class BenchRow:
    scenario: int
    tags: dict[str, str]
    selection: str
    strategy: str
    rho: float
    seed: int
    metrics: TrackingMetrics

    def as_record(self) -> dict:
        record = {
            "scenario": self.scenario,
            "selection": self.selection,
            "strategy": self.strategy,
            "rho": self.rho,
            "seed": self.seed,
        }
        record.update({f"tag_{k}": v for k, v in sorted(self.tags.items())})
        record.update(self.metrics.as_dict())
        return record


def routing_for(
    inventory: ModuleInventory,
    query: dict[str, str],
    selection: str,
    strategy: str,
    rho: float,
) -> RoutingWeights:
    """Per-attribute module weights for a scenario under a selection rule."""
    schema = inventory.schema
    if selection == "all":
        return all_modules_route(schema)
    if selection == "expert":
        routed = dict(query)
    elif selection == "opposite":
        routed = opposite_route(schema, query)
    else:
        raise ConfigError(f"unknown selection {selection!r}; choose from {SELECTIONS}")
    effective_rho = rho if strategy == "weighted" else 1.0
    return soft_route(schema, routed, effective_rho)


def compose_for_query(
    inventory: ModuleInventory,
    theta0: ParameterStore,
    query: dict[str, str],
    selection: str = "expert",
    strategy: str = "mean",
    rho: float = 1.0,
) -> tuple[ParameterStore, CompositionPlan]:
    schema = inventory.schema
    weights = routing_for(inventory, query, selection, strategy, rho)
    plan = CompositionPlan.uniform(schema.names, strategy=strategy, rho=rho, routing=weights)
    taus = [
        attribute_task_vector(inventory, attr, weights[attr], theta0)
        for attr in schema.names
    ]
    return compose(theta0, taus, plan), plan


def track_sequence(
    net: ToyNetwork, seq: SyntheticSequence, grid: GridSpec, gate: float = 7.0
) -> list[list[tuple[int, tuple[float, float, float, float]]]]:
    """Run the detector + associator over a sequence; frames are normalized
    to unit range before the forward pass."""
    tracker = NearestCenterTracker(gate=gate)
    pred = []
    for frame in seq.frames:
        out, _ = forward(net, frame / 255.0)
        detections = decode_detections(out, grid)
        pred.append(tracker.update(detections))
    return pred


def run_benchmark(
    inventory: ModuleInventory,
    theta0: ParameterStore,
    scenarios: Sequence[dict[str, str]],
    strategy: str = "mean",
    rho: float = 1.0,
    seed: int = 0,
    selection: str = "expert",
    length: int = 8,
    spec: NetSpec | None = None,
    checkpoint: ParameterStore | None = None,
) -> list[BenchRow]:
    """Score each scenario; composition is per scenario unless a fixed
    ``checkpoint`` is supplied."""
    spec = spec or NetSpec()
    grid = spec.grid_spec()
    rows = []
    for i, query in enumerate(scenarios):
        inventory.schema.validate_query(query)
        seq_seed = int(
            np.random.SeedSequence([0xBE7C, seed, i]).generate_state(1)[0] % (2**31)
        )
        seq = generate_sequence(query, length, seq_seed, frame=spec.frame,
                                schema=inventory.schema)
        if checkpoint is not None:
            theta_c = checkpoint
        else:
            theta_c, _ = compose_for_query(
                inventory, theta0, query, selection=selection, strategy=strategy, rho=rho
            )
        net = ToyNetwork(spec, theta_c)
        pred = track_sequence(net, seq, grid)
        metrics = evaluate(pred, seq.gt_boxes(), threshold=0.5)
        rows.append(
            BenchRow(
                scenario=i,
                tags=dict(query),
                selection=selection if checkpoint is None else "fixed",
                strategy=strategy,
                rho=rho,
                seed=seq_seed,
                metrics=metrics,
            )
        )
    return rows


def mean_mota(rows: Sequence[BenchRow]) -> float:
    return float(np.mean([r.metrics.mota for r in rows]))


def paired_margin(a: Sequence[BenchRow], b: Sequence[BenchRow]) -> tuple[float, float]:
    """Mean and standard error of per-scenario MOTA differences a - b."""
    if len(a) != len(b):
        raise ConfigError("paired comparison needs equally many rows")
    diffs = np.array([ra.metrics.mota - rb.metrics.mota for ra, rb in zip(a, b)])
    se = float(np.std(diffs, ddof=1) / np.sqrt(len(diffs))) if len(diffs) > 1 else 0.0
    return float(np.mean(diffs)), se
