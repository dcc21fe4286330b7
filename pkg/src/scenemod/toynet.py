"""From-scratch toy detector: conv + two linear layers, manual backprop.

Layout: conv1 -> optional scale-and-shift -> ReLU -> flatten -> fc1 (+LoRA)
-> ReLU -> fc2 (+LoRA). The base parameters live in a ParameterStore and are
frozen during module training; gradients are computed and applied only for
the currently attached adapters. A separate gradient path over the base
parameters exists solely for bootstrap training of the initial weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adapters import LoraAdapter, ScaleShiftAdapter, lora_init, ssf_init
from .detect import GridSpec
from .errors import ConfigError, DataError, NumericError, ShapeError
from .routing import AdapterModule, AttributeSchema, ModuleInventory
from .tensor import Array, ParameterStore, conv2d, im2col


@dataclass(frozen=True)
class NetSpec:
    in_channels: int = 3
    frame: int = 60
    conv_channels: int = 8
    kernel: int = 3
    stride: int = 2
    padding: int = 1
    hidden: int = 384
    head_channels: int = 4
    cell: int = 5
    activation: str = "relu"  # "identity" bypasses both ReLUs (diagnostics)

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.frame % self.cell != 0:
            raise ConfigError(f"frame {self.frame} not divisible by cell {self.cell}")

    @property
    def conv_out(self) -> int:
        return (self.frame + 2 * self.padding - self.kernel) // self.stride + 1

    @property
    def flat_dim(self) -> int:
        return self.conv_channels * self.conv_out * self.conv_out

    @property
    def grid(self) -> int:
        return self.frame // self.cell

    @property
    def out_dim(self) -> int:
        return self.head_channels * self.grid * self.grid

    def grid_spec(self, size_norm: float = 10.0) -> GridSpec:
        return GridSpec(frame=self.frame, cell=self.cell, size_norm=size_norm)

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "conv1.W": (self.conv_channels, self.in_channels, self.kernel, self.kernel),
            "conv1.b": (self.conv_channels,),
            "fc1.W": (self.hidden, self.flat_dim),
            "fc1.b": (self.hidden,),
            "fc2.W": (self.out_dim, self.hidden),
            "fc2.b": (self.out_dim,),
        }


@dataclass
class TrainingConfig:
    """Hyperparameters for adapter and bootstrap training."""

    lora_lr: float = 3e-4
    lora_weight_decay: float = 0.1
    ssf_lr: float = 1e-5
    ssf_weight_decay: float = 1e-4
    accumulation: int = 4
    iterations: int = 2400
    rank: int = 16
    lora_min_width: int = 0
    seed: int = 0
    base_lr: float = 0.05
    base_momentum: float = 0.9
    base_iterations: int = 3000


@dataclass
class TrainItem:
    """One supervised sample: normalized frame, target vector, loss mask, tags."""

    x: Array
    target: Array
    mask: Array
    tags: dict[str, str]


def init_base_params(spec: NetSpec, seed: int) -> ParameterStore:
    rng = np.random.default_rng(np.random.SeedSequence([0xBA5E, int(seed)]))
    shapes = spec.layer_shapes()
    params = ParameterStore()
    fan_conv = spec.in_channels * spec.kernel * spec.kernel
    params["conv1.W"] = rng.normal(0.0, np.sqrt(2.0 / fan_conv), shapes["conv1.W"])
    params["conv1.b"] = np.zeros(shapes["conv1.b"])
    params["fc1.W"] = rng.normal(0.0, np.sqrt(2.0 / spec.flat_dim), shapes["fc1.W"])
    params["fc1.b"] = np.zeros(shapes["fc1.b"])
    params["fc2.W"] = rng.normal(0.0, 0.01 / np.sqrt(spec.hidden), shapes["fc2.W"])
    params["fc2.b"] = np.zeros(shapes["fc2.b"])
    return params


class ToyNetwork:
    """Base parameters plus at most one adapter per insertion point."""

    def __init__(self, spec: NetSpec, params: ParameterStore):
        expected = spec.layer_shapes()
        if params.names() != sorted(expected):
            raise ShapeError(
                f"parameter names {params.names()} do not match {sorted(expected)}"
            )
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name}: shape {params[name].shape}, expected {shape}")
        self.spec = spec
        self.params = params
        self.ssf: ScaleShiftAdapter | None = None
        self.lora: dict[str, LoraAdapter] = {}
        self._version = 0

    def bump(self) -> None:
        self._version += 1

    def attach(self, module: AdapterModule) -> None:
        for target, adapter in module.adapters.items():
            if isinstance(adapter, ScaleShiftAdapter):
                if target != "conv1":
                    raise ConfigError(f"scale-and-shift target {target!r} is not conv1")
                self.ssf = adapter
            else:
                if target not in ("fc1", "fc2"):
                    raise ConfigError(f"lora target {target!r} is not a linear layer")
                self.lora[target] = adapter
        self.bump()

    def detach_all(self) -> None:
        self.ssf = None
        self.lora = {}
        self.bump()


@dataclass
class ForwardCache:
    x: Array
    z1: Array
    z1s: Array
    flat: Array
    u1: Array | None
    z2: Array
    a2: Array
    u2: Array | None
    version: int
    net: "ToyNetwork"


@dataclass
class AdapterGradients:
    """Gradients for the attached adapters only; keys mirror the attachments."""

    lora: dict[str, tuple[Array, Array]] = field(default_factory=dict)  # target -> (dA, dB)
    ssf: tuple[Array, Array] | None = None  # (dgamma, dbeta)


def _act(spec: NetSpec, z: Array) -> Array:
    return np.maximum(z, 0.0) if spec.activation == "relu" else z


def _act_grad(spec: NetSpec, z: Array) -> Array:
    return (z > 0).astype(np.float64) if spec.activation == "relu" else np.ones_like(z)


def forward(net: ToyNetwork, x: Array) -> tuple[Array, ForwardCache]:
    spec = net.spec
    if x.shape != (spec.in_channels, spec.frame, spec.frame):
        raise ShapeError(
            f"input {x.shape}, expected {(spec.in_channels, spec.frame, spec.frame)}"
        )
    p = net.params
    z1 = conv2d(x, p["conv1.W"], p["conv1.b"], stride=spec.stride, padding=spec.padding)
    z1s = (
        net.ssf.gamma[:, None, None] * z1 + net.ssf.beta[:, None, None]
        if net.ssf is not None
        else z1
    )
    flat = _act(spec, z1s).ravel()

    u1 = None
    z2 = p["fc1.W"] @ flat + p["fc1.b"]
    if "fc1" in net.lora:
        u1 = net.lora["fc1"].A @ flat
        z2 = z2 + net.lora["fc1"].B @ u1
    a2 = _act(spec, z2)

    u2 = None
    z3 = p["fc2.W"] @ a2 + p["fc2.b"]
    if "fc2" in net.lora:
        u2 = net.lora["fc2"].A @ a2
        z3 = z3 + net.lora["fc2"].B @ u2

    cache = ForwardCache(
        x=x, z1=z1, z1s=z1s, flat=flat, u1=u1, z2=z2, a2=a2, u2=u2,
        version=net._version, net=net,
    )
    return z3, cache


def backward(net: ToyNetwork, cache: ForwardCache, dout: Array) -> AdapterGradients:
    """Gradients for attached adapter parameters only; the base store is
    never differentiated on this path."""
    if cache.net is not net or cache.version != net._version:
        raise DataError("stale forward cache: network changed since the forward pass")
    spec = net.spec
    p = net.params
    grads = AdapterGradients()

    delta3 = dout
    if "fc2" in net.lora:
        lora2 = net.lora["fc2"]
        grads.lora["fc2"] = (
            np.outer(lora2.B.T @ delta3, cache.a2),  # dA
            np.outer(delta3, cache.u2),  # dB
        )
        da2 = p["fc2.W"].T @ delta3 + lora2.A.T @ (lora2.B.T @ delta3)
    else:
        da2 = p["fc2.W"].T @ delta3
    dz2 = da2 * _act_grad(spec, cache.z2)

    if "fc1" in net.lora:
        lora1 = net.lora["fc1"]
        grads.lora["fc1"] = (
            np.outer(lora1.B.T @ dz2, cache.flat),
            np.outer(dz2, cache.u1),
        )
        dflat = p["fc1.W"].T @ dz2 + lora1.A.T @ (lora1.B.T @ dz2)
    else:
        dflat = p["fc1.W"].T @ dz2

    if net.ssf is not None:
        da1 = dflat.reshape(cache.z1.shape)
        dz1s = da1 * _act_grad(spec, cache.z1s)
        grads.ssf = (
            np.sum(dz1s * cache.z1, axis=(1, 2)),  # dgamma
            np.sum(dz1s, axis=(1, 2)),  # dbeta
        )
    return grads


def base_gradients(net: ToyNetwork, cache: ForwardCache, dout: Array) -> dict[str, Array]:
    """Gradients of the base parameters, used only by bootstrap training.

    Assumes no adapters are attached.
    """
    if net.ssf is not None or net.lora:
        raise DataError("base gradients require a network without adapters")
    if cache.net is not net or cache.version != net._version:
        raise DataError("stale forward cache: network changed since the forward pass")
    spec = net.spec
    p = net.params

    delta3 = dout
    grads = {
        "fc2.W": np.outer(delta3, cache.a2),
        "fc2.b": delta3.copy(),
    }
    dz2 = (p["fc2.W"].T @ delta3) * _act_grad(spec, cache.z2)
    grads["fc1.W"] = np.outer(dz2, cache.flat)
    grads["fc1.b"] = dz2.copy()

    dflat = p["fc1.W"].T @ dz2
    dz1 = dflat.reshape(cache.z1.shape) * _act_grad(spec, cache.z1s)
    cols = im2col(cache.x, spec.kernel, spec.kernel, spec.stride, spec.padding)
    c_out = spec.conv_channels
    grads["conv1.W"] = (dz1.reshape(c_out, -1) @ cols).reshape(p["conv1.W"].shape)
    grads["conv1.b"] = np.sum(dz1, axis=(1, 2))
    return grads


def masked_mse(out: Array, target: Array, mask: Array) -> tuple[float, Array]:
    """Mean squared error over the masked entries; returns (loss, dL/dout)."""
    wsum = float(np.sum(mask))
    if wsum <= 0:
        raise DataError("loss mask selects nothing")
    diff = (out - target) * mask
    loss = float(np.sum(diff * diff)) / wsum
    return loss, 2.0 * diff / wsum


def fresh_module(
    spec: NetSpec, config: TrainingConfig, attribute: str, value: str, seed: int
) -> AdapterModule:
    """Identity-initialized adapters for every insertion point of the net."""
    module = AdapterModule(attribute=attribute, value=value)
    module.adapters["conv1"] = ssf_init(spec.conv_channels, target="conv1")
    layer_dims = {"fc1": (spec.hidden, spec.flat_dim), "fc2": (spec.out_dim, spec.hidden)}
    for i, (target, (d, k)) in enumerate(sorted(layer_dims.items())):
        if d < config.lora_min_width:
            continue
        rank = min(config.rank, d, k)
        module.adapters[target] = lora_init(d, k, rank, seed=seed * 131 + i, target=target)
    return module


def fresh_inventory(
    schema: AttributeSchema, spec: NetSpec, config: TrainingConfig
) -> ModuleInventory:
    inventory = ModuleInventory(schema)
    for idx, (attribute, value) in enumerate(schema.module_keys()):
        inventory.add(fresh_module(spec, config, attribute, value, seed=config.seed * 977 + idx))
    return inventory


class _ModuleOptimizer:
    """Plain SGD with decoupled weight decay and gradient accumulation."""

    def __init__(self, module: AdapterModule, config: TrainingConfig):
        self.module = module
        self.config = config
        self.acc: dict[tuple[str, str], Array] = {}
        self.pending = 0

    def accumulate(self, grads: AdapterGradients) -> None:
        for target, (da, db) in grads.lora.items():
            self._add((target, "A"), da)
            self._add((target, "B"), db)
        if grads.ssf is not None:
            self._add(("conv1", "gamma"), grads.ssf[0])
            self._add(("conv1", "beta"), grads.ssf[1])
        self.pending += 1

    def _add(self, key: tuple[str, str], grad: Array) -> None:
        if key in self.acc:
            self.acc[key] += grad
        else:
            self.acc[key] = grad.copy()

    def maybe_step(self) -> bool:
        if self.pending < self.config.accumulation:
            return False
        cfg = self.config
        for (target, param), grad in self.acc.items():
            adapter = self.module.adapters[target]
            g = grad / self.pending
            if param in ("A", "B"):
                lr, wd = cfg.lora_lr, cfg.lora_weight_decay
            else:
                lr, wd = cfg.ssf_lr, cfg.ssf_weight_decay
            old = getattr(adapter, param)
            setattr(adapter, param, old - lr * g - lr * wd * old)
        self.acc = {}
        self.pending = 0
        return True


def _matching_items(dataset: Sequence[TrainItem], attribute: str, value: str) -> list[TrainItem]:
    items = [item for item in dataset if item.tags.get(attribute) == value]
    if not items:
        raise DataError(f"no training samples with {attribute}={value}")
    return items


def train_module(
    net: ToyNetwork,
    inventory: ModuleInventory,
    attribute: str,
    value: str,
    dataset: Sequence[TrainItem],
    config: TrainingConfig,
    iterations: int | None = None,
    rng: np.random.Generator | None = None,
    log: Callable[[dict], None] | None = None,
) -> AdapterModule:
    """Train a single expert on the samples carrying its tag value.

    Only this module's parameters are read or written; the base network and
    every other inventory module are untouched.
    """
    module = inventory.get(attribute, value)
    items = _matching_items(dataset, attribute, value)
    steps = config.iterations if iterations is None else iterations
    if rng is None:
        idx = inventory.schema.module_keys().index((attribute, value))
        rng = np.random.default_rng(np.random.SeedSequence([0x7A17, config.seed, idx]))

    optimizer = _ModuleOptimizer(module, config)
    net.detach_all()
    net.attach(module)
    for it in range(steps):
        item = items[int(rng.integers(len(items)))]
        out, cache = forward(net, item.x)
        loss, dout = masked_mse(out, item.target, item.mask)
        grads = backward(net, cache, dout)
        optimizer.accumulate(grads)
        if optimizer.maybe_step():
            net.bump()
        if log is not None:
            log(
                {
                    "iteration": it,
                    "module": f"{attribute}.{value}",
                    "loss": loss,
                    "backward_count": it + 1,
                }
            )
    net.detach_all()
    return module


def train_all_modules(
    net: ToyNetwork,
    inventory: ModuleInventory,
    dataset: Sequence[TrainItem],
    config: TrainingConfig,
    log: Callable[[dict], None] | None = None,
) -> dict[tuple[str, str], int]:
    """Interleaved training of every module with balanced backward counts.

    The total backward budget ``config.iterations`` is split across modules
    so counts differ by at most one; the visit order inside each round is a
    seeded shuffle. Each module keeps its own gradient accumulator and steps
    every ``config.accumulation`` of its own backwards. Returns the final
    backward-count histogram.
    """
    inventory.validate_complete()
    keys = inventory.schema.module_keys()
    items_by_key = {k: _matching_items(dataset, *k) for k in keys}

    rng = np.random.default_rng(np.random.SeedSequence([0xA11, config.seed]))
    total = config.iterations
    base_count, extra = divmod(total, len(keys))
    quota = {k: base_count for k in keys}
    for pos in rng.permutation(len(keys))[:extra]:
        quota[keys[pos]] += 1

    optimizers = {k: _ModuleOptimizer(inventory.get(*k), config) for k in keys}
    counts = {k: 0 for k in keys}
    it = 0
    while any(counts[k] < quota[k] for k in keys):
        order = [keys[i] for i in rng.permutation(len(keys))]
        for key in order:
            if counts[key] >= quota[key]:
                continue
            module = inventory.get(*key)
            items = items_by_key[key]
            item = items[int(rng.integers(len(items)))]
            net.detach_all()
            net.attach(module)
            out, cache = forward(net, item.x)
            loss, dout = masked_mse(out, item.target, item.mask)
            grads = backward(net, cache, dout)
            optimizer = optimizers[key]
            optimizer.accumulate(grads)
            if optimizer.maybe_step():
                net.bump()
            counts[key] += 1
            it += 1
            if log is not None:
                log(
                    {
                        "iteration": it,
                        "module": f"{key[0]}.{key[1]}",
                        "loss": loss,
                        "backward_count": counts[key],
                    }
                )
    net.detach_all()
    return counts


def bootstrap_train(
    spec: NetSpec,
    dataset: Sequence[TrainItem],
    config: TrainingConfig,
    log: Callable[[dict], None] | None = None,
) -> tuple[ParameterStore, list[float]]:
    """SGD-with-momentum training of the base parameters from scratch."""
    if not dataset:
        raise DataError("bootstrap training needs a non-empty dataset")
    params = init_base_params(spec, config.seed)
    net = ToyNetwork(spec, params)
    rng = np.random.default_rng(np.random.SeedSequence([0xB007, config.seed]))
    velocity = {name: np.zeros_like(params[name]) for name in params.names()}
    losses = []
    for it in range(config.base_iterations):
        item = dataset[int(rng.integers(len(dataset)))]
        out, cache = forward(net, item.x)
        loss, dout = masked_mse(out, item.target, item.mask)
        grads = base_gradients(net, cache, dout)
        for name, grad in grads.items():
            velocity[name] = config.base_momentum * velocity[name] - config.base_lr * grad
            params[name] = params[name] + velocity[name]
        net.bump()
        losses.append(loss)
        if log is not None and it % 50 == 0:
            log({"iteration": it, "module": "base", "loss": loss, "backward_count": it + 1})
    return params, losses


def finite_diff_check(net: ToyNetwork, x: Array, h: float = 1e-6) -> float:
    """Worst relative gap between backprop and central differences.

    The probe loss is mean(out**2). For every attached adapter tensor the
    elementwise |fd - analytic| gap is normalized by the largest gradient
    magnitude in that tensor, which keeps the measure meaningful where
    individual entries happen to be near zero.
    """
    if h <= 0:
        raise NumericError(f"finite difference step must be positive, got {h!r}")
    out, cache = forward(net, x)
    dout = 2.0 * out / out.size
    analytic = backward(net, cache, dout)

    def loss_now() -> float:
        value, _ = forward(net, x)
        return float(np.mean(value * value))

    worst = 0.0
    for tensor, grad in _iter_adapter_grads(net, analytic):
        fd = np.zeros_like(grad)
        for idx in np.ndindex(tensor.shape):
            keep = tensor[idx]
            tensor[idx] = keep + h
            up = loss_now()
            tensor[idx] = keep - h
            down = loss_now()
            tensor[idx] = keep
            fd[idx] = (up - down) / (2.0 * h)
        scale = max(float(np.max(np.abs(grad))), float(np.max(np.abs(fd))), 1e-8)
        worst = max(worst, float(np.max(np.abs(fd - grad))) / scale)
    return worst


def _iter_adapter_grads(net: ToyNetwork, grads: AdapterGradients):
    for target, (da, db) in grads.lora.items():
        yield net.lora[target].A, da
        yield net.lora[target].B, db
    if grads.ssf is not None:
        yield net.ssf.gamma, grads.ssf[0]
        yield net.ssf.beta, grads.ssf[1]


DIAG_SPEC = NetSpec(
    in_channels=2,
    frame=12,
    conv_channels=4,
    kernel=3,
    stride=2,
    padding=1,
    hidden=20,
    head_channels=4,
    cell=4,
)


def random_diag_net(seed: int, spec: NetSpec = DIAG_SPEC, rank: int = 2) -> tuple[ToyNetwork, Array]:
    """Small randomized network + input for gradient diagnostics.

    Adapters get non-trivial random values so every gradient path is live.
    Configurations whose pre-activations sit within 1e-4 of a ReLU kink are
    resampled; finite differences are meaningless there.
    """
    for attempt in range(64):
        rng = np.random.default_rng(np.random.SeedSequence([0xD1A6, seed, attempt]))
        params = init_base_params(spec, seed * 31 + attempt)
        params["fc2.W"] = rng.normal(0.0, 0.2, params["fc2.W"].shape)
        params["fc2.b"] = rng.normal(0.0, 0.2, params["fc2.b"].shape)
        params["conv1.b"] = rng.normal(0.0, 0.2, params["conv1.b"].shape)
        params["fc1.b"] = rng.normal(0.0, 0.2, params["fc1.b"].shape)
        net = ToyNetwork(spec, params)
        module = AdapterModule(attribute="diag", value="diag")
        module.adapters["conv1"] = ScaleShiftAdapter(
            target="conv1",
            gamma=rng.uniform(0.6, 1.4, spec.conv_channels),
            beta=rng.uniform(-0.4, 0.4, spec.conv_channels),
        )
        for target, (d, k) in (("fc1", (spec.hidden, spec.flat_dim)),
                               ("fc2", (spec.out_dim, spec.hidden))):
            module.adapters[target] = LoraAdapter(
                target=target,
                A=rng.normal(0.0, 0.3, (rank, k)),
                B=rng.normal(0.0, 0.3, (d, rank)),
            )
        net.attach(module)
        x = rng.uniform(0.1, 1.0, (spec.in_channels, spec.frame, spec.frame))
        _, cache = forward(net, x)
        if min(np.min(np.abs(cache.z1s)), np.min(np.abs(cache.z2))) > 1e-4:
            return net, x
    raise DataError("could not sample a kink-free diagnostic configuration")


def gradcheck_suite(
    cases: int = 50, h: float = 1e-6, seed: int = 0
) -> tuple[float, list[float]]:
    """Worst finite-difference relative error across randomized networks."""
    errors = []
    for case in range(cases):
        net, x = random_diag_net(seed * 1009 + case)
        errors.append(finite_diff_check(net, x, h))
    return max(errors), errors


def jsonl_logger(path) -> Callable[[dict], None]:
    """Append-mode JSON-lines logger for training records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = open(path, "a", encoding="utf-8")

    def log(record: dict) -> None:
        handle.write(json.dumps(record, sort_keys=True) + "\n")
        handle.flush()

    return log
