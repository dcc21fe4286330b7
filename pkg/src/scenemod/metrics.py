"""CLEAR-style tracking metrics: per-frame matching, MOTA, and identity F1.

Boxes are (x, y, w, h) with the origin at the top-left corner. Matching uses
min-cost assignment on 1 - IoU; pairs below the IoU threshold are rejected.
An identity switch is charged when a ground-truth track's matched prediction
id differs from its most recent previous match.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .assignment import INFEASIBLE, min_cost_assignment
from .errors import DataError

Box = tuple[float, float, float, float]
# One frame of tracked boxes: list of (track_id, box).
FrameTracks = Sequence[tuple[int, Box]]

DEFAULT_IOU_THRESHOLD = 0.5


@dataclass
class TrackingMetrics:
    mota: float
    idf1: float
    fp: int
    fn: int
    idsw: int
    gt: int

    def as_dict(self) -> dict:
        return {
            "mota": self.mota,
            "idf1": self.idf1,
            "fp": self.fp,
            "fn": self.fn,
            "idsw": self.idsw,
            "gt": self.gt,
        }


def iou(a: Box, b: Box) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        return 0.0
    x1 = max(ax, bx)
    y1 = max(ay, by)
    x2 = min(ax + aw, bx + bw)
    y2 = min(ay + ah, by + bh)
    if x2 <= x1 or y2 <= y1:
        return 0.0
    inter = (x2 - x1) * (y2 - y1)
    return inter / (aw * ah + bw * bh - inter)


def iou_matrix(pred: Sequence[Box], gt: Sequence[Box]) -> np.ndarray:
    mat = np.zeros((len(pred), len(gt)))
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            mat[i, j] = iou(p, g)
    return mat


def match_frame(
    pred: Sequence[Box], gt: Sequence[Box], threshold: float = DEFAULT_IOU_THRESHOLD
) -> list[tuple[int, int]]:
    """Min-cost (1 - IoU) assignment between boxes; sub-threshold pairs dropped.

    Returns (pred_index, gt_index) pairs sorted by pred index.
    """
    if not 0.0 < threshold <= 1.0:
        raise DataError(f"IoU threshold must be in (0, 1], got {threshold!r}")
    if not pred or not gt:
        return []
    overlaps = iou_matrix(pred, gt)
    cost = np.where(overlaps >= threshold, 1.0 - overlaps, INFEASIBLE)
    pairs = min_cost_assignment(cost)
    return sorted((i, j) for i, j in pairs if overlaps[i, j] >= threshold)


def evaluate(
    pred_tracks: Sequence[FrameTracks],
    gt_tracks: Sequence[FrameTracks],
    threshold: float = DEFAULT_IOU_THRESHOLD,
) -> TrackingMetrics:
    """Accumulate MOTA counts over frames and compute IDF1 globally."""
    if len(pred_tracks) != len(gt_tracks):
        raise DataError(
            f"frame counts differ: {len(pred_tracks)} pred vs {len(gt_tracks)} gt"
        )
    total_gt = sum(len(frame) for frame in gt_tracks)
    if total_gt == 0:
        raise DataError("empty ground truth: MOTA is undefined")

    fp = fn = idsw = 0
    last_match: dict[int, int] = {}
    for preds, gts in zip(pred_tracks, gt_tracks):
        pred_boxes = [box for _, box in preds]
        gt_boxes = [box for _, box in gts]
        pairs = match_frame(pred_boxes, gt_boxes, threshold)
        fp += len(pred_boxes) - len(pairs)
        fn += len(gt_boxes) - len(pairs)
        for pi, gi in pairs:
            gt_id = gts[gi][0]
            pred_id = preds[pi][0]
            prev = last_match.get(gt_id)
            if prev is not None and prev != pred_id:
                idsw += 1
            last_match[gt_id] = pred_id

    mota = 1.0 - (fp + fn + idsw) / total_gt
    idf1 = _idf1(pred_tracks, gt_tracks, threshold)
    return TrackingMetrics(mota=mota, idf1=idf1, fp=fp, fn=fn, idsw=idsw, gt=total_gt)


def _idf1(
    pred_tracks: Sequence[FrameTracks],
    gt_tracks: Sequence[FrameTracks],
    threshold: float,
) -> float:
    """Identity F1 under the IDTP-maximizing global track mapping."""
    gt_ids = sorted({tid for frame in gt_tracks for tid, _ in frame})
    pred_ids = sorted({tid for frame in pred_tracks for tid, _ in frame})
    total_gt = sum(len(frame) for frame in gt_tracks)
    total_pred = sum(len(frame) for frame in pred_tracks)
    if not pred_ids:
        return 0.0

    gt_index = {tid: i for i, tid in enumerate(gt_ids)}
    pred_index = {tid: i for i, tid in enumerate(pred_ids)}
    overlap_frames = np.zeros((len(gt_ids), len(pred_ids)))
    for preds, gts in zip(pred_tracks, gt_tracks):
        for gt_id, gt_box in gts:
            for pred_id, pred_box in preds:
                if iou(pred_box, gt_box) >= threshold:
                    overlap_frames[gt_index[gt_id], pred_index[pred_id]] += 1

    # Maximize total matched frames over one-to-one id mappings. Padding to a
    # square with zeros lets tracks stay unmapped at zero gain.
    size = max(len(gt_ids), len(pred_ids))
    gain = np.zeros((size, size))
    gain[: len(gt_ids), : len(pred_ids)] = overlap_frames
    pairs = min_cost_assignment(np.max(gain) - gain)
    idtp = sum(gain[i, j] for i, j in pairs)
    return 2.0 * idtp / (total_gt + total_pred)
