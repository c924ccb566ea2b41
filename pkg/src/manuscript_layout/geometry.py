"""Pixel-mask and box geometry kernels.

Everything here operates on plain numpy arrays: binary masks are boolean
H x W grids, soft masks are float H x W grids with values in [0, 1].
All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np


class Box(NamedTuple):
    """Axis-aligned box in (x1, y1, x2, y2) pixel coordinates, x1<=x2, y1<=y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height


def rasterize_polygon(vertices: Sequence[Tuple[float, float]], height: int, width: int) -> np.ndarray:
    """Rasterize a polygon to a boolean mask.

    A pixel (r, c) is set iff its center (c + 0.5, r + 0.5) lies inside the
    polygon under the even-odd rule.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 2:
        raise ValueError("polygon needs at least 3 (x, y) vertices")
    if height < 1 or width < 1:
        raise ValueError("mask dimensions must be >= 1")

    px = np.arange(width, dtype=np.float64) + 0.5
    py = np.arange(height, dtype=np.float64) + 0.5
    cx, cy = np.meshgrid(px, py)

    inside = np.zeros((height, width), dtype=bool)
    n = verts.shape[0]
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        if y1 == y2:
            continue
        # crossing-number test for a horizontal ray towards +x
        crosses = (y1 > cy) != (y2 > cy)
        with np.errstate(invalid="ignore"):
            xint = x1 + (cy - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (cx < xint)
    return inside


def point_in_polygon(x: float, y: float, vertices: Sequence[Tuple[float, float]]) -> bool:
    """Scalar even-odd inside test; reference oracle for rasterize_polygon."""
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if (y1 > y) != (y2 > y) and x < x1 + (y - y1) * (x2 - x1) / (y2 - y1):
            inside = not inside
    return inside


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection-over-union of two boolean masks; 0.0 when both are empty."""
    if a.shape != b.shape:
        raise ValueError(f"mask dimension mismatch: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def box_iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes on areas; 0.0 when both degenerate."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms(
    items: Sequence[Tuple[float, object]],
    iou_threshold: float,
    iou_fn: Callable[[object, object], float],
) -> list[int]:
    """Greedy non-maximum suppression over (score, shape) pairs.

    Repeatedly keeps the highest-score remaining item and discards items whose
    IoU with it exceeds ``iou_threshold``. Ties on score resolve to the lower
    original index. Returns kept indices sorted by descending score.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    order = sorted(range(len(items)), key=lambda i: (-items[i][0], i))
    kept: list[int] = []
    suppressed = [False] * len(items)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(i)
        for j in order:
            if not suppressed[j] and j != i and iou_fn(items[i][1], items[j][1]) > iou_threshold:
                suppressed[j] = True
    return kept


def nms_boxes(boxes: Sequence[Box], scores: Sequence[float], iou_threshold: float) -> list[int]:
    """NMS specialised to boxes (vectorised IoU), same contract as :func:`nms`."""
    n = len(boxes)
    if n == 0:
        return []
    arr = np.asarray(boxes, dtype=np.float64)
    sc = np.asarray(scores, dtype=np.float64)
    areas = (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])
    order = np.lexsort((np.arange(n), -sc))
    kept: list[int] = []
    alive = np.ones(n, dtype=bool)
    for i in order:
        if not alive[i]:
            continue
        kept.append(int(i))
        ix = np.minimum(arr[order, 2], arr[i, 2]) - np.maximum(arr[order, 0], arr[i, 0])
        iy = np.minimum(arr[order, 3], arr[i, 3]) - np.maximum(arr[order, 1], arr[i, 1])
        inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
        union = areas[order] + areas[i] - inter
        iou = np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)
        alive[order[(iou > iou_threshold) & (order != i)]] = False
    return kept


def resize_bilinear(m: np.ndarray, new_height: int, new_width: int) -> np.ndarray:
    """Bilinear resize with the align-corners-false sampling convention.

    Output sample centers map to input coordinates (i + 0.5) * scale - 0.5,
    clamped to the valid range. Identity when dimensions are unchanged.
    """
    if new_height < 1 or new_width < 1:
        raise ValueError("target dimensions must be >= 1")
    src = np.asarray(m, dtype=np.float64)
    h, w = src.shape
    if (new_height, new_width) == (h, w):
        return src.copy()

    ys = (np.arange(new_height) + 0.5) * (h / new_height) - 0.5
    xs = (np.arange(new_width) + 0.5) * (w / new_width) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)

    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def binarize(m: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold a soft mask; the comparison is inclusive (value >= threshold)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return np.asarray(m, dtype=np.float64) >= threshold


def mask_to_box(m: np.ndarray) -> Optional[Box]:
    """Tight bounding box of the set pixels in pixel-edge coordinates.

    Returns None for an empty mask.
    """
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(m.any(axis=0))
    return Box(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))
