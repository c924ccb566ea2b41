"""Region proposal selection: decode RPN outputs, filter, suppress, cap."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .anchors import decode_box_deltas
from .geometry import Box

TRAIN_MAX_PROPOSALS = 512
INFER_MAX_PROPOSALS = 1000


@dataclass
class ProposalSet:
    boxes: List[Box]
    scores: np.ndarray  # descending


def rpn_propose(
    objectness: np.ndarray,
    deltas: np.ndarray,
    anchors: np.ndarray,
    objectness_floor: float = 0.0,
    nms_threshold: float = 0.7,
    max_proposals: int = INFER_MAX_PROPOSALS,
) -> ProposalSet:
    """Decode deltas, drop anchors at or below the floor, NMS, cap the count.

    Output is sorted by descending objectness. The suppression runs over the
    full candidate set: greedy NMS keeps boxes in descending-score order, so
    stopping once ``max_proposals`` survive is exactly equivalent to running
    NMS to completion and truncating afterwards. Pre-truncating the candidate
    list instead would silently drop low-ranked boxes whose higher-scored
    neighbourhood gets suppressed — large sparse regions would never surface.
    """
    if objectness.shape[0] != anchors.shape[0]:
        raise ValueError("objectness not aligned with anchors")
    keep = np.flatnonzero(objectness > objectness_floor)
    if keep.size == 0:
        return ProposalSet(boxes=[], scores=np.zeros(0))
    order = np.lexsort((keep, -objectness[keep]))
    cand = keep[order]
    decoded = decode_box_deltas(anchors[cand], deltas[cand])
    areas = (decoded[:, 2] - decoded[:, 0]) * (decoded[:, 3] - decoded[:, 1])
    kept: List[int] = []
    kx1 = np.empty(max_proposals)
    ky1 = np.empty(max_proposals)
    kx2 = np.empty(max_proposals)
    ky2 = np.empty(max_proposals)
    karea = np.empty(max_proposals)
    n_kept = 0
    for i in range(len(cand)):
        if n_kept:
            ix = np.minimum(kx2[:n_kept], decoded[i, 2]) - np.maximum(kx1[:n_kept], decoded[i, 0])
            iy = np.minimum(ky2[:n_kept], decoded[i, 3]) - np.maximum(ky1[:n_kept], decoded[i, 1])
            inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
            union = karea[:n_kept] + areas[i] - inter
            iou = np.where(union > 0.0, inter / np.maximum(union, 1e-12), 0.0)
            if (iou > nms_threshold).any():
                continue
        kept.append(i)
        kx1[n_kept], ky1[n_kept], kx2[n_kept], ky2[n_kept] = decoded[i]
        karea[n_kept] = areas[i]
        n_kept += 1
        if n_kept == max_proposals:
            break
    return ProposalSet(
        boxes=[Box(*decoded[i]) for i in kept], scores=objectness[cand[kept]]
    )


def clip_boxes(boxes: List[Box], width: float, height: float) -> List[Box]:
    """Clamp boxes into [0, width] x [0, height]."""
    return [
        Box(
            min(max(b.x1, 0.0), width),
            min(max(b.y1, 0.0), height),
            min(max(b.x2, 0.0), width),
            min(max(b.y2, 0.0), height),
        )
        for b in boxes
    ]
