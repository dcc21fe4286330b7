"""Detection head codec and a deliberately simple frame-to-frame associator.

The network's output vector is interpreted as a (4, G, G) grid over the
frame: per cell an objectness score, the fractional (dx, dy) of the object
center inside the cell, and the box side length in ``size_norm`` units.
Association is greedy nearest-center linking with a fixed gate so that
metric differences reflect the composed parameters, not tracker cleverness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Array

Detection = tuple[float, float, float]  # (cx, cy, side)


@dataclass(frozen=True)
class GridSpec:
    frame: int = 60
    cell: int = 5
    size_norm: float = 10.0
    score_threshold: float = 0.5

    def __post_init__(self):
        if self.frame % self.cell != 0:
            raise ConfigError(f"frame {self.frame} not divisible by cell {self.cell}")

    @property
    def grid(self) -> int:
        return self.frame // self.cell

    @property
    def out_dim(self) -> int:
        return 4 * self.grid * self.grid


def encode_targets(
    objects: list[Detection], grid: GridSpec
) -> tuple[Array, Array]:
    """Build the regression target and loss mask for one frame.

    Returns flattened (target, mask) of length ``grid.out_dim``. The score
    channel is supervised everywhere; offsets and size only at occupied
    cells. When two objects share a cell the first one wins.
    """
    g = grid.grid
    target = np.zeros((4, g, g))
    mask = np.zeros((4, g, g))
    mask[0] = 1.0
    for cx, cy, side in objects:
        ix = min(max(int(cx // grid.cell), 0), g - 1)
        iy = min(max(int(cy // grid.cell), 0), g - 1)
        if target[0, iy, ix] == 1.0:
            continue
        target[0, iy, ix] = 1.0
        target[1, iy, ix] = np.clip(cx / grid.cell - ix, 0.0, 1.0)
        target[2, iy, ix] = np.clip(cy / grid.cell - iy, 0.0, 1.0)
        target[3, iy, ix] = side / grid.size_norm
        mask[1:, iy, ix] = 1.0
    return target.ravel(), mask.ravel()


def decode_detections(output: Array, grid: GridSpec) -> list[Detection]:
    """Invert :func:`encode_targets` on a predicted output vector."""
    g = grid.grid
    fields = output.reshape(4, g, g)
    detections = []
    for iy, ix in zip(*np.nonzero(fields[0] > grid.score_threshold)):
        dx = float(np.clip(fields[1, iy, ix], 0.0, 1.0))
        dy = float(np.clip(fields[2, iy, ix], 0.0, 1.0))
        side = float(np.clip(fields[3, iy, ix], 0.2, 2.0) * grid.size_norm)
        detections.append(((ix + dx) * grid.cell, (iy + dy) * grid.cell, side))
    return detections


def to_box(det: Detection) -> tuple[float, float, float, float]:
    cx, cy, side = det
    return (cx - side / 2.0, cy - side / 2.0, side, side)


class NearestCenterTracker:
    """Greedy nearest-center linking with a fixed gating radius."""

    def __init__(self, gate: float = 7.0):
        self.gate = gate
        self._centers: dict[int, tuple[float, float]] = {}
        self._next_id = 0

    def update(self, detections: list[Detection]) -> list[tuple[int, tuple]]:
        track_ids = sorted(self._centers)
        pairs = []
        for ti, tid in enumerate(track_ids):
            tx, ty = self._centers[tid]
            for di, (cx, cy, _) in enumerate(detections):
                dist = float(np.hypot(cx - tx, cy - ty))
                if dist <= self.gate:
                    pairs.append((dist, ti, di))
        pairs.sort()

        assigned_tracks: set[int] = set()
        assigned_dets: set[int] = set()
        links: dict[int, int] = {}
        for _, ti, di in pairs:
            if ti in assigned_tracks or di in assigned_dets:
                continue
            assigned_tracks.add(ti)
            assigned_dets.add(di)
            links[di] = track_ids[ti]

        out = []
        new_centers: dict[int, tuple[float, float]] = {}
        for di, det in enumerate(detections):
            tid = links.get(di)
            if tid is None:
                tid = self._next_id
                self._next_id += 1
            new_centers[tid] = (det[0], det[1])
            out.append((tid, to_box(det)))
        self._centers = new_centers
        return out
