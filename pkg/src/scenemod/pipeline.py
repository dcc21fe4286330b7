"""Workspace plumbing: on-disk dataset layout and training-item assembly.

Layout under ``data_dir``:
  split.json                      train/holdout combination lists + seed
  sequences/<combo>/<seqNNN>/     frames.ckpt, gt.txt, tags.json
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig
from .detect import GridSpec, encode_targets
from .errors import DataError
from .routing import AttributeSchema
from .synth import SyntheticSequence, generate_sequence, load_sequence, save_sequence
from .toynet import TrainItem


def combo_key(query: dict[str, str], schema: AttributeSchema) -> str:
    return "-".join(query[name] for name in schema.names)


def split_path(config: RunConfig) -> Path:
    return config.paths.data_dir / "split.json"


def generate_dataset(config: RunConfig) -> dict:
    """Write sequences for every attribute combination plus the split manifest.

    A seeded fraction of the combinations is held out of training entirely;
    those scenes exist only for domain-shift evaluation.
    """
    combos = config.combo_keys()
    rng = np.random.default_rng(np.random.SeedSequence([0xDA7A, config.seed]))
    n_holdout = int(round(config.data.holdout_fraction * len(combos)))
    holdout_idx = set(rng.permutation(len(combos))[:n_holdout].tolist())

    seq_root = config.paths.data_dir / "sequences"
    n_frames = 0
    train_keys, holdout_keys = [], []
    for ci, query in enumerate(combos):
        key = combo_key(query, config.schema)
        (train_keys if ci not in holdout_idx else holdout_keys).append(key)
        for si in range(config.data.sequences_per_combo):
            seed = int(
                np.random.SeedSequence([0x5E9, config.seed, ci, si]).generate_state(1)[0]
                % (2**31)
            )
            seq = generate_sequence(
                query, config.data.length, seed, frame=config.net.frame, schema=config.schema
            )
            save_sequence(seq, seq_root / key / f"seq{si:03d}")
            n_frames += seq.length

    manifest = {
        "seed": config.seed,
        "train": sorted(train_keys),
        "holdout": sorted(holdout_keys),
        "sequences_per_combo": config.data.sequences_per_combo,
        "length": config.data.length,
    }
    split_path(config).parent.mkdir(parents=True, exist_ok=True)
    split_path(config).write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return {
        "combos": len(combos),
        "train_combos": len(train_keys),
        "holdout_combos": len(holdout_keys),
        "sequences": len(combos) * config.data.sequences_per_combo,
        "frames": n_frames,
    }


def load_split(config: RunConfig) -> dict:
    path = split_path(config)
    if not path.is_file():
        raise DataError(f"missing split manifest {path}; run gen-data first")
    return json.loads(path.read_text(encoding="utf-8"))


def sequence_dirs(config: RunConfig, subset: str) -> list[Path]:
    """Sequence directories for 'train' or 'holdout' combinations, sorted."""
    split = load_split(config)
    if subset not in ("train", "holdout"):
        raise DataError(f"unknown subset {subset!r}")
    dirs = []
    for key in split[subset]:
        combo_dir = config.paths.data_dir / "sequences" / key
        if not combo_dir.is_dir():
            raise DataError(f"missing sequence directory {combo_dir}")
        dirs.extend(sorted(p for p in combo_dir.iterdir() if p.is_dir()))
    return dirs


def load_sequences(dirs: list[Path]) -> list[SyntheticSequence]:
    return [load_sequence(d) for d in dirs]


def make_training_items(
    sequences: list[SyntheticSequence], grid: GridSpec
) -> list[TrainItem]:
    """Turn sequences into supervised frames (normalized image, target, mask)."""
    items = []
    for seq in sequences:
        for frame, frame_gt in zip(seq.frames, seq.gt):
            objects = [(cx, cy, w) for _, (cx, cy), (_, _, w, _) in frame_gt]
            target, mask = encode_targets(objects, grid)
            items.append(
                TrainItem(x=frame / 255.0, target=target, mask=mask, tags=dict(seq.tags))
            )
    return items


def bootstrap_halves(config: RunConfig) -> tuple[list[Path], list[Path]]:
    """Seeded split of the training sequences into bootstrap and module halves."""
    dirs = sequence_dirs(config, "train")
    rng = np.random.default_rng(np.random.SeedSequence([0xB151, config.seed]))
    order = rng.permutation(len(dirs))
    half = len(dirs) // 2
    chosen = sorted(order[:half].tolist())
    rest = sorted(order[half:].tolist())
    return [dirs[i] for i in chosen], [dirs[i] for i in rest]


def scenario_queries(
    config: RunConfig, subset: str, count: int
) -> list[dict[str, str]]:
    """Deterministic scenario list cycling through a subset's combinations."""
    split = load_split(config)
    keys = split[subset]
    if not keys:
        raise DataError(f"no {subset!r} combinations in the split manifest")
    by_key = {combo_key(q, config.schema): q for q in config.combo_keys()}
    queries = []
    rng = np.random.default_rng(np.random.SeedSequence([0x5C31, config.seed]))
    order = rng.permutation(len(keys))
    for i in range(count):
        queries.append(dict(by_key[keys[int(order[i % len(keys)])]]))
    return queries
