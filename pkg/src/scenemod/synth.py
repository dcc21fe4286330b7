"""Deterministic generator of attribute-tagged synthetic tracking scenes.

A scene is a short sequence of small RGB frames containing moving bright
blobs over a background. Every schema attribute leaves a distinct, visible
signature in the rendering:

  lighting    global brightness gain (mean HSV value above/below 70)
  viewpoint   blob size (high camera = small/far blobs)
  occupancy   object count inside the classifier bands
  location    background texture (indoor smooth vs outdoor clutter)
  motion      camera jitter plus motion blur for a moving camera

Generation is a pure function of (tags, length, seed); the emitted tags are
recoverable from the content with the routing classifiers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError
from .routing import AttributeSchema, classify_lighting, classify_occupancy
from .tensor import Array, ParameterStore

JITTER_MAX = 2
OBJECT_SPEED = 1.2

SIDE_BY_VIEWPOINT = {"high": 4.6, "medium": 6.4, "low": 8.8}
COUNT_BY_OCCUPANCY = {"low": (3, 8), "medium": (14, 30), "high": (41, 48)}
BRIGHTNESS_BY_LIGHTING = {"good": (100.0, 140.0), "bad": (34.0, 54.0)}


@dataclass
class SyntheticSequence:
    frames: list[Array]  # (3, H, W) float64 in [0, 255]
    gt: list[list[tuple[int, tuple[float, float], tuple[float, float, float, float]]]]
    tags: dict[str, str]
    seed: int

    @property
    def length(self) -> int:
        return len(self.frames)

    def gt_boxes(self) -> list[list[tuple[int, tuple[float, float, float, float]]]]:
        return [[(tid, box) for tid, _, box in frame] for frame in self.gt]


def mean_brightness(frame: Array) -> float:
    """Mean over pixels of the HSV value channel (per-pixel channel max)."""
    return float(np.mean(np.max(frame, axis=0)))


def _smooth(noise: Array, sigma: float) -> Array:
    """Separable Gaussian blur implemented with an explicit kernel."""
    radius = max(1, int(3 * sigma))
    xs = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(noise, radius, mode="wrap")
    out = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="valid"), 1, padded)
    out = np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="valid"), 0, out)
    return out


def _background(rng: np.random.Generator, location: str, size: int) -> Array:
    """Static (3, size, size) background in unit amplitude."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    base = 0.16 + 0.06 * (ramp - ramp.min())
    if location == "indoor":
        texture = np.zeros((size, size))
        for _ in range(3):
            cx, cy = rng.uniform(0.2, 0.8, size=2) * size
            sig = rng.uniform(0.18, 0.32) * size
            texture += rng.uniform(0.04, 0.09) * np.exp(
                -((xx * size - cx) ** 2 + (yy * size - cy) ** 2) / (2 * sig**2)
            )
    else:
        noise = rng.standard_normal((size, size))
        noise = _smooth(noise, 1.1)
        noise /= max(np.std(noise), 1e-9)
        texture = 0.12 * np.abs(noise)
    channel_tint = 1.0 + rng.uniform(-0.08, 0.08, size=3)
    return np.clip(channel_tint[:, None, None] * (base + texture)[None], 0.0, None)


def _box_blur3(frame: Array, axis: int) -> Array:
    """Length-3 box blur along a spatial axis with clamped edges."""
    shifted_fwd = np.roll(frame, 1, axis=axis)
    shifted_back = np.roll(frame, -1, axis=axis)
    if axis == 1:
        shifted_fwd[:, 0, :] = frame[:, 0, :]
        shifted_back[:, -1, :] = frame[:, -1, :]
    else:
        shifted_fwd[:, :, 0] = frame[:, :, 0]
        shifted_back[:, :, -1] = frame[:, :, -1]
    return (shifted_fwd + frame + shifted_back) / 3.0


def _render_blob(canvas: Array, cx: float, cy: float, side: float,
                 amplitude: float, tint: Array) -> None:
    sigma = side / 2.6
    radius = int(np.ceil(1.6 * sigma))
    size = canvas.shape[1]
    x0, x1 = int(np.floor(cx)) - radius, int(np.floor(cx)) + radius + 1
    y0, y1 = int(np.floor(cy)) - radius, int(np.floor(cy)) + radius + 1
    x0c, x1c = max(x0, 0), min(x1, size)
    y0c, y1c = max(y0, 0), min(y1, size)
    if x0c >= x1c or y0c >= y1c:
        return
    ys, xs = np.mgrid[y0c:y1c, x0c:x1c]
    bump = amplitude * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))
    canvas[:, y0c:y1c, x0c:x1c] += tint[:, None, None] * bump


def _reflect(value: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    t = (value - lo) % (2 * span)
    return lo + (t if t <= span else 2 * span - t)


def generate_sequence(
    tags: dict[str, str],
    length: int,
    seed: int,
    frame: int = 60,
    schema: AttributeSchema | None = None,
) -> SyntheticSequence:
    """Render a tagged scene deterministically from the seed."""
    schema = schema or AttributeSchema()
    schema.validate_query(tags)
    if length < 1:
        raise ConfigError(f"sequence length must be >= 1, got {length}")
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, int(seed)]))

    lo, hi = COUNT_BY_OCCUPANCY[tags["occupancy"]]
    n_obj = int(rng.integers(lo, hi + 1))
    base_side = SIDE_BY_VIEWPOINT[tags["viewpoint"]]
    sides = base_side * rng.uniform(0.92, 1.08, size=n_obj)
    amplitudes = rng.uniform(0.6, 0.9, size=n_obj)
    tints = np.clip(1.0 + rng.uniform(-0.22, 0.22, size=(n_obj, 3)), 0.35, None)

    margin = float(np.max(sides)) / 2.0 + JITTER_MAX + 1.0
    positions = rng.uniform(margin, frame - margin, size=(n_obj, 2))
    velocities = rng.uniform(-OBJECT_SPEED, OBJECT_SPEED, size=(n_obj, 2))

    moving = tags["motion"] == "moving"
    blur_axis = int(rng.integers(1, 3))
    jitter = np.zeros((length, 2))
    if moving:
        steps = rng.integers(-1, 2, size=(length, 2))
        jitter = np.clip(np.cumsum(steps, axis=0), -JITTER_MAX, JITTER_MAX).astype(float)

    background = _background(rng, tags["location"], frame + 2 * JITTER_MAX)
    v_lo, v_hi = BRIGHTNESS_BY_LIGHTING[tags["lighting"]]
    target_v = rng.uniform(v_lo, v_hi)

    frames: list[Array] = []
    gt: list[list] = []
    for t in range(length):
        jx, jy = jitter[t]
        ox = int(JITTER_MAX + jx)
        oy = int(JITTER_MAX + jy)
        canvas = background[:, oy : oy + frame, ox : ox + frame].copy()

        frame_gt = []
        for i in range(n_obj):
            wx = _reflect(positions[i, 0] + t * velocities[i, 0], margin, frame - margin)
            wy = _reflect(positions[i, 1] + t * velocities[i, 1], margin, frame - margin)
            cx, cy = wx - jx, wy - jy
            _render_blob(canvas, cx, cy, sides[i], amplitudes[i], tints[i])
            side = float(sides[i])
            box = (cx - side / 2.0, cy - side / 2.0, side, side)
            frame_gt.append((i, (cx, cy), box))

        if moving:
            canvas = _box_blur3(canvas, blur_axis)

        canvas = _apply_lighting(canvas, target_v)
        if classify_lighting(mean_brightness(canvas)) != tags["lighting"]:
            raise DataError(
                f"generated frame violates its lighting tag {tags['lighting']!r}"
            )
        frames.append(canvas)
        gt.append(frame_gt)

    if classify_occupancy(np.ones(n_obj)) != tags["occupancy"]:
        raise DataError(f"object count {n_obj} violates occupancy tag")
    return SyntheticSequence(frames=frames, gt=gt, tags=dict(tags), seed=int(seed))


def _apply_lighting(canvas: Array, target_v: float) -> Array:
    """Rescale to the target mean brightness (0..255), reiterating when the
    255 clip eats into the mean."""
    out = canvas * 255.0
    for _ in range(3):
        current = float(np.mean(np.max(out, axis=0)))
        out = np.clip(out * (target_v / max(current, 1e-9)), 0.0, 255.0)
        if abs(float(np.mean(np.max(out, axis=0))) - target_v) <= 3.0:
            break
    return out


def save_sequence(seq: SyntheticSequence, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    store = ParameterStore()
    for t, frame in enumerate(seq.frames):
        store[f"frame.{t:06d}"] = frame
    save_checkpoint(store, directory / "frames.ckpt")
    lines = []
    for t, frame_gt in enumerate(seq.gt):
        for tid, _, (x, y, w, h) in frame_gt:
            lines.append(f"{t},{tid},{x:.4f},{y:.4f},{w:.4f},{h:.4f}")
    (directory / "gt.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest = {"tags": seq.tags, "seed": seq.seed, "length": seq.length}
    (directory / "tags.json").write_text(
        json.dumps(manifest, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_sequence(directory) -> SyntheticSequence:
    directory = Path(directory)
    manifest_path = directory / "tags.json"
    if not manifest_path.is_file():
        raise DataError(f"missing tags manifest in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    store = load_checkpoint(directory / "frames.ckpt")
    frames = [store[name] for name in store.names()]
    length = manifest["length"]
    gt: list[list] = [[] for _ in range(length)]
    gt_path = directory / "gt.txt"
    if not gt_path.is_file():
        raise DataError(f"missing gt.txt in {directory}")
    for line in gt_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        t, tid, x, y, w, h = line.split(",")
        t, tid = int(t), int(tid)
        x, y, w, h = float(x), float(y), float(w), float(h)
        gt[t].append((tid, (x + w / 2.0, y + h / 2.0), (x, y, w, h)))
    return SyntheticSequence(
        frames=frames, gt=gt, tags=manifest["tags"], seed=manifest["seed"]
    )
