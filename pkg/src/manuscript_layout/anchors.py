"""Anchor generation and box delta encoding for the region proposal stage.

Anchors use five per-level scales and three aspect ratios; the ratios are
wide (width:height), so 1:10 yields long, thin boxes shaped like text lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .geometry import Box

# ratio r means width:height; wide ratios match long thin text lines
DEFAULT_ASPECT_RATIOS = (1.0, 3.0, 10.0)
DEFAULT_SCALES = (32.0, 64.0, 128.0, 256.0, 512.0)
DEFAULT_STRIDES = (4, 8, 16, 32, 64)


@dataclass(frozen=True)
class AnchorSpec:
    """Per-pyramid-level anchor sizes; area of each anchor equals scale^2."""

    scales: Tuple[float, ...] = DEFAULT_SCALES
    aspect_ratios: Tuple[float, ...] = DEFAULT_ASPECT_RATIOS
    strides: Tuple[int, ...] = DEFAULT_STRIDES

    def __post_init__(self) -> None:
        if len(self.scales) != 5 or len(self.strides) != 5:
            raise ValueError("anchor spec needs exactly 5 scales and strides")
        if len(self.aspect_ratios) != 3:
            raise ValueError("anchor spec needs exactly 3 aspect ratios")

    def to_json(self) -> dict:
        return {
            "scales": list(self.scales),
            "aspect_ratios": list(self.aspect_ratios),
            "strides": list(self.strides),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "AnchorSpec":
        return cls(
            scales=tuple(payload["scales"]),
            aspect_ratios=tuple(payload["aspect_ratios"]),
            strides=tuple(payload["strides"]),
        )


def anchor_dims(scale: float, ratio: float) -> Tuple[float, float]:
    """(width, height) with w*h = scale^2 and w/h = ratio."""
    w = scale * math.sqrt(ratio)
    h = scale / math.sqrt(ratio)
    return w, h


def generate_anchors_level(
    height: int, width: int, stride: int, scale: float, ratios: Sequence[float]
) -> np.ndarray:
    """Anchors for one level: row-major over cells, ratio-minor. Shape (H*W*R, 4)."""
    dims = np.array([anchor_dims(scale, r) for r in ratios])  # (R, 2)
    cx = (np.arange(width) + 0.5) * stride
    cy = (np.arange(height) + 0.5) * stride
    cyy, cxx = np.meshgrid(cy, cx, indexing="ij")
    centers = np.stack([cxx.ravel(), cyy.ravel()], axis=1)  # (H*W, 2) row-major
    c = np.repeat(centers, len(ratios), axis=0)
    d = np.tile(dims, (len(centers), 1))
    return np.stack(
        [
            c[:, 0] - d[:, 0] / 2,
            c[:, 1] - d[:, 1] / 2,
            c[:, 0] + d[:, 0] / 2,
            c[:, 1] + d[:, 1] / 2,
        ],
        axis=1,
    )


def generate_anchors(
    pyramid_dims: Sequence[Tuple[int, int]], spec: AnchorSpec = AnchorSpec()
) -> np.ndarray:
    """All anchors, level-major then row-major then ratio-minor. Shape (N, 4)."""
    if len(pyramid_dims) != 5:
        raise ValueError("expected 5 pyramid levels")
    levels = [
        generate_anchors_level(h, w, spec.strides[i], spec.scales[i], spec.aspect_ratios)
        for i, (h, w) in enumerate(pyramid_dims)
    ]
    return np.concatenate(levels, axis=0)


def encode_box_deltas(anchor: np.ndarray, box: np.ndarray) -> np.ndarray:
    """Deltas (tx, ty, tw, th) regressing anchor onto box; inverse of decode.

    Works elementwise over (..., 4) arrays of (x1, y1, x2, y2) boxes.
    """
    aw = anchor[..., 2] - anchor[..., 0]
    ah = anchor[..., 3] - anchor[..., 1]
    acx = anchor[..., 0] + aw / 2
    acy = anchor[..., 1] + ah / 2
    bw = box[..., 2] - box[..., 0]
    bh = box[..., 3] - box[..., 1]
    bcx = box[..., 0] + bw / 2
    bcy = box[..., 1] + bh / 2
    return np.stack(
        [(bcx - acx) / aw, (bcy - acy) / ah, np.log(bw / aw), np.log(bh / ah)], axis=-1
    )


def decode_box_deltas(anchor: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Apply (tx, ty, tw, th) deltas to anchors; (..., 4) -> (..., 4)."""
    if not np.all(np.isfinite(deltas)):
        raise ValueError("non-finite box deltas")
    aw = anchor[..., 2] - anchor[..., 0]
    ah = anchor[..., 3] - anchor[..., 1]
    acx = anchor[..., 0] + aw / 2
    acy = anchor[..., 1] + ah / 2
    cx = acx + deltas[..., 0] * aw
    cy = acy + deltas[..., 1] * ah
    w = aw * np.exp(deltas[..., 2])
    h = ah * np.exp(deltas[..., 3])
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def boxes_to_list(arr: np.ndarray) -> List[Box]:
    return [Box(*row) for row in np.asarray(arr, dtype=float)]
