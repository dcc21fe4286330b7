"""Dense float64 tensor ops and named parameter stores.

Tensors are plain ``numpy.ndarray`` values with dtype float64. Every public
operation validates that its result is finite; shape problems raise
:class:`ShapeError` naming both shapes.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import NumericError, ShapeError

Array = np.ndarray


def as_tensor(data) -> Array:
    """Convert to a float64 array and reject non-finite values."""
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains non-finite values")
    return arr


def _check_finite(arr: Array, op: str) -> Array:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")
    return arr


def add(a: Array, b: Array) -> Array:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _check_finite(a + b, "add")


def scale(a: Array, c: float) -> Array:
    return _check_finite(a * float(c), "scale")


def hadamard(a: Array, b: Array) -> Array:
    """Elementwise product.

    Besides same-shape operands, a length-C vector may multiply a rank-4
    tensor whose leading (output-channel) extent is C; the vector is
    broadcast over the remaining axes.
    """
    if a.shape == b.shape:
        return _check_finite(a * b, "hadamard")
    if a.ndim == 4 and b.ndim == 1:
        a, b = b, a
    if a.ndim == 1 and b.ndim == 4 and b.shape[0] == a.shape[0]:
        return _check_finite(a[:, None, None, None] * b, "hadamard")
    raise ShapeError(f"hadamard: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Array, b: Array) -> Array:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} vs {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree {a.shape} vs {b.shape}")
    return _check_finite(a @ b, "matmul")


def conv2d(x: Array, w: Array, b: Array, stride: int = 1, padding: int = 0) -> Array:
    """Cross-correlation of a single image with a 4-D kernel plus channel bias.

    x: (C_in, H, W); w: (C_out, C_in, kh, kw); b: (C_out,).
    Output extents are (H + 2*padding - kh) // stride + 1 and likewise for W.
    """
    if x.ndim != 3 or w.ndim != 4 or b.ndim != 1:
        raise ShapeError(
            f"conv2d: expected ranks (3,4,1), got {x.shape}, {w.shape}, {b.shape}"
        )
    c_out, c_in, kh, kw = w.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d: input channels {x.shape} vs kernel {w.shape}")
    if b.shape[0] != c_out:
        raise ShapeError(f"conv2d: bias {b.shape} vs kernel {w.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} padding={padding}")
    h_out = (x.shape[1] + 2 * padding - kh) // stride + 1
    w_out = (x.shape[2] + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"conv2d: non-positive output extent for input {x.shape}, "
            f"kernel {w.shape}, stride={stride}, padding={padding}"
        )
    cols = im2col(x, kh, kw, stride, padding)
    out = cols @ w.reshape(c_out, -1).T + b
    out = out.reshape(h_out, w_out, c_out).transpose(2, 0, 1)
    return _check_finite(np.ascontiguousarray(out), "conv2d")


def im2col(x: Array, kh: int, kw: int, stride: int, padding: int) -> Array:
    """Unfold conv windows into rows: (H_out*W_out, C_in*kh*kw)."""
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (C_in, H_out, W_out, kh, kw)
    c_in, h_out, w_out = windows.shape[:3]
    return np.ascontiguousarray(windows.transpose(1, 2, 0, 3, 4)).reshape(
        h_out * w_out, c_in * kh * kw
    )


class ParameterStore:
    """Ordered mapping from dot-separated names to float64 tensors.

    Iteration order is lexicographic by name regardless of insert order.
    """

    def __init__(self, entries: Mapping[str, Array] | None = None):
        self._entries: dict[str, Array] = {}
        if entries:
            for name, value in entries.items():
                self[name] = value

    def __setitem__(self, name: str, value) -> None:
        if not isinstance(name, str) or not name:
            raise ShapeError(f"parameter name must be a non-empty string, got {name!r}")
        self._entries[name] = as_tensor(value)

    def __getitem__(self, name: str) -> Array:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def items(self) -> Iterable[tuple[str, Array]]:
        for name in self.names():
            yield name, self._entries[name]

    def copy(self) -> "ParameterStore":
        return ParameterStore({n: v.copy() for n, v in self._entries.items()})

    def shape_compatible(self, other: "ParameterStore") -> bool:
        if self.names() != other.names():
            return False
        return all(self[n].shape == other[n].shape for n in self.names())

    def equal_bits(self, other: "ParameterStore") -> bool:
        if self.names() != other.names():
            return False
        return all(
            self[n].shape == other[n].shape
            and self[n].tobytes() == other[n].tobytes()
            for n in self.names()
        )

    def digest(self) -> str:
        """SHA-256 over names, shapes, and raw little-endian payload."""
        h = hashlib.sha256()
        for name, value in self.items():
            h.update(name.encode("utf-8"))
            h.update(repr(value.shape).encode("ascii"))
            h.update(value.astype("<f8", copy=False).tobytes())
        return h.hexdigest()


def store_diff(after: ParameterStore, before: ParameterStore) -> ParameterStore:
    """Per-name difference ``after - before`` of shape-compatible stores."""
    if after.names() != before.names():
        raise ShapeError(
            f"store_diff: name sets differ: {after.names()} vs {before.names()}"
        )
    out = ParameterStore()
    for name in after.names():
        a, b = after[name], before[name]
        if a.shape != b.shape:
            raise ShapeError(f"store_diff: {name}: shape {a.shape} vs {b.shape}")
        out[name] = a - b
    return out
