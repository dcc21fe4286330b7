"""LoRA and scale-and-shift adapters: forward rules, deltas, absorption.

A LoRA adapter stores the low-rank factors (A, B) of a weight delta B @ A
for a named linear layer. A scale-and-shift adapter stores per-channel
(gamma, beta) applied to a named convolution's output; it can be absorbed
into the convolution weights, which is also how its task vector is derived.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Array, as_tensor, hadamard, matmul

WEIGHT_SUM_TOL = 1e-12


@dataclass
class LoraAdapter:
    """Low-rank delta B @ A for the d-by-k weight of layer ``target``."""

    target: str
    A: Array  # (r, k)
    B: Array  # (d, r)

    def __post_init__(self):
        self.A = as_tensor(self.A)
        self.B = as_tensor(self.B)
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ShapeError(f"lora factors must be 2-D: A {self.A.shape}, B {self.B.shape}")
        if self.A.shape[0] != self.B.shape[1]:
            raise ShapeError(f"lora rank mismatch: A {self.A.shape} vs B {self.B.shape}")
        d, k = self.B.shape[0], self.A.shape[1]
        if self.rank > min(d, k):
            raise ShapeError(f"lora rank {self.rank} exceeds min{d, k}")

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def out_dim(self) -> int:
        return self.B.shape[0]

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]


@dataclass
class ScaleShiftAdapter:
    """Per-channel affine (gamma, beta) on the output of conv layer ``target``."""

    target: str
    gamma: Array  # (C,)
    beta: Array  # (C,)

    def __post_init__(self):
        self.gamma = as_tensor(self.gamma)
        self.beta = as_tensor(self.beta)
        if self.gamma.ndim != 1 or self.gamma.shape != self.beta.shape:
            raise ShapeError(
                f"scale/shift must be equal-length vectors: "
                f"{self.gamma.shape} vs {self.beta.shape}"
            )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def lora_init(d: int, k: int, r: int, seed: int, target: str = "") -> LoraAdapter:
    """Fresh adapter: B = 0, A ~ uniform(-1/sqrt(k), 1/sqrt(k)).

    The zero B makes a fresh adapter's delta exactly zero, so attaching it
    leaves the network function unchanged.
    """
    if r < 1 or r > min(d, k):
        raise ShapeError(f"invalid lora rank {r} for layer {d}x{k}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(k)
    return LoraAdapter(
        target=target,
        A=rng.uniform(-bound, bound, size=(r, k)),
        B=np.zeros((d, r)),
    )


def ssf_init(channels: int, target: str = "") -> ScaleShiftAdapter:
    """Identity adapter: gamma = 1, beta = 0."""
    return ScaleShiftAdapter(target=target, gamma=np.ones(channels), beta=np.zeros(channels))


def lora_forward(adapter: LoraAdapter, w0: Array, x: Array) -> Array:
    """w0 @ x + B @ (A @ x), always through the two-step low-rank path."""
    if w0.shape != (adapter.out_dim, adapter.in_dim):
        raise ShapeError(
            f"lora_forward: base weight {w0.shape} vs adapter "
            f"({adapter.out_dim}, {adapter.in_dim})"
        )
    if x.shape != (adapter.in_dim,):
        raise ShapeError(f"lora_forward: input {x.shape} vs in_dim {adapter.in_dim}")
    return w0 @ x + adapter.B @ (adapter.A @ x)


def lora_delta(adapter: LoraAdapter) -> Array:
    """Materialized weight delta B @ A."""
    return matmul(adapter.B, adapter.A)


def ssf_forward(adapter: ScaleShiftAdapter, feat: Array) -> Array:
    """Per-channel affine transform of a (C, H, W) feature map."""
    if feat.ndim != 3 or feat.shape[0] != adapter.channels:
        raise ShapeError(
            f"ssf_forward: features {feat.shape} vs {adapter.channels} channels"
        )
    return adapter.gamma[:, None, None] * feat + adapter.beta[:, None, None]


def _check_ssf_weights(
    weighted: Sequence[tuple[Array, Array, float]], channels: int
) -> None:
    total = 0.0
    for gamma, beta, lam in weighted:
        if gamma.shape != (channels,) or beta.shape != (channels,):
            raise ShapeError(
                f"absorb: gamma {gamma.shape} / beta {beta.shape} vs {channels} channels"
            )
        total += float(lam)
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise NumericError(f"absorb: weights sum to {total!r}, expected 1")


def absorb_scale_shift(
    weighted: Sequence[tuple[Array, Array, float]], w0: Array, b0: Array
) -> tuple[Array, Array]:
    """Fold weighted scale-and-shift modules into conv weights.

    Returns (w_star, b_star) with
      w_star = sum_m lam_m * gamma_m (x) w0      (broadcast over out channels)
      b_star = sum_m lam_m * (gamma_m * b0 + beta_m)
    so that conv(h, w_star, b_star) equals the lam-weighted average of the
    individual per-module affine outputs for every input h.
    """
    if w0.ndim != 4 or b0.ndim != 1 or b0.shape[0] != w0.shape[0]:
        raise ShapeError(f"absorb: conv weight {w0.shape} vs bias {b0.shape}")
    channels = w0.shape[0]
    _check_ssf_weights(weighted, channels)
    w_star = np.zeros_like(w0)
    b_star = np.zeros_like(b0)
    for gamma, beta, lam in weighted:
        lam = float(lam)
        w_star += lam * hadamard(gamma, w0)
        b_star += lam * (hadamard(gamma, b0) + beta)
    return w_star, b_star


def ssf_task_vector(
    weighted: Sequence[tuple[Array, Array, float]], w0: Array, b0: Array
) -> tuple[Array, Array]:
    """Displacement of the absorbed conv parameters from the base ones."""
    w_star, b_star = absorb_scale_shift(weighted, w0, b0)
    return w_star - w0, b_star - b0
