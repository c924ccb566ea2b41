"""End-to-end prediction pipeline from raw image to full-resolution masks.

The stage chain and its constants are fixed: 1000 proposals survive RPN NMS,
the top 100 detections with classification score above 0.5 reach the mask
head, soft masks binarize at 0.4, and the survivors pass per-class mask NMS
at 0.5 after being rescaled to the original image frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .anchors import decode_box_deltas, generate_anchors
from .corpus import DocumentAnnotation, Polygon, RegionClass, RegionInstance
from .geometry import Box, binarize, mask_iou, nms, resize_bilinear
from .model import BOX_POOL_SIZE, MASK_POOL_SIZE, LayoutParsingNetwork
from .proposals import INFER_MAX_PROPOSALS, clip_boxes, rpn_propose
from .training import CLASS_ORDER, INPUT_SIZE, PreprocessResult, preprocess_image


@dataclass(frozen=True)
class InferenceConfig:
    proposals_after_nms: int = 1000
    max_detections: int = 100
    detection_score_floor: float = 0.5
    mask_binarize_threshold: float = 0.4
    final_mask_nms_threshold: float = 0.5
    rpn_nms_threshold: float = 0.7
    rpn_objectness_floor: float = 0.0

    def __post_init__(self) -> None:
        for name in ("detection_score_floor", "mask_binarize_threshold", "final_mask_nms_threshold"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass
class Detection:
    """One scored, classed, masked prediction in network input space."""

    region_class: RegionClass
    score: float
    box: Box
    mask28: np.ndarray  # (28, 28) soft mask


@dataclass
class LayoutInstance:
    region_class: RegionClass
    score: float
    mask: np.ndarray  # boolean, original image dimensions
    box: Box  # original image coordinates


@dataclass
class ParsedLayout:
    instances: List[LayoutInstance]  # sorted by descending score
    width: int
    height: int


@dataclass
class PipelineStats:
    """Instrumented counters for verifying the pipeline constants."""

    proposal_cap: int = 0
    proposals_kept: int = 0
    detection_cap: int = 0
    score_floor: float = 0.0
    detections_kept: int = 0
    binarize_threshold: float = 0.0
    mask_nms_threshold: float = 0.0
    masks_before_nms: int = 0
    masks_after_nms: int = 0


def _paste_mask(det: Detection, binarize_threshold: float) -> np.ndarray:
    """Resolve a 28x28 soft mask into its box extent on the input canvas."""
    canvas = np.zeros((INPUT_SIZE, INPUT_SIZE), dtype=bool)
    x1 = max(int(np.floor(det.box.x1)), 0)
    y1 = max(int(np.floor(det.box.y1)), 0)
    x2 = min(int(np.ceil(det.box.x2)), INPUT_SIZE)
    y2 = min(int(np.ceil(det.box.y2)), INPUT_SIZE)
    if x2 <= x1 or y2 <= y1:
        return canvas
    soft = resize_bilinear(det.mask28, y2 - y1, x2 - x1)
    canvas[y1:y2, x1:x2] = binarize(soft, binarize_threshold)
    return canvas


def postprocess_masks(
    detections: Sequence[Detection],
    pre: PreprocessResult,
    cfg: InferenceConfig = InferenceConfig(),
    stats: Optional[PipelineStats] = None,
) -> ParsedLayout:
    """Turn input-space detections into original-frame instances.

    Each mask is pasted into its box extent, binarized at the configured
    threshold, bilinearly rescaled into the original frame (undoing the
    preprocess scale and padding), then passed through per-class mask NMS.
    Cross-class overlap is never suppressed.
    """
    ow, oh = pre.original_width, pre.original_height
    candidates: List[LayoutInstance] = []
    for det in detections:
        input_mask = _paste_mask(det, cfg.mask_binarize_threshold)
        content = input_mask[: pre.content_height, : pre.content_width].astype(np.float64)
        full = binarize(resize_bilinear(content, oh, ow), 0.5) if content.size else np.zeros(
            (oh, ow), dtype=bool
        )
        box = Box(
            min(max(det.box.x1 / pre.scale, 0.0), ow),
            min(max(det.box.y1 / pre.scale, 0.0), oh),
            min(max(det.box.x2 / pre.scale, 0.0), ow),
            min(max(det.box.y2 / pre.scale, 0.0), oh),
        )
        candidates.append(LayoutInstance(det.region_class, det.score, full, box))

    if stats is not None:
        stats.binarize_threshold = cfg.mask_binarize_threshold
        stats.mask_nms_threshold = cfg.final_mask_nms_threshold
        stats.masks_before_nms = len(candidates)

    # per-class mask NMS; legitimate cross-class overlap must survive
    survivors: List[LayoutInstance] = []
    for cls in RegionClass:
        group = [c for c in candidates if c.region_class is cls]
        if not group:
            continue
        kept = nms(
            [(c.score, c.mask) for c in group],
            cfg.final_mask_nms_threshold,
            mask_iou,
        )
        survivors.extend(group[i] for i in kept)

    survivors.sort(key=lambda c: -c.score)
    if stats is not None:
        stats.masks_after_nms = len(survivors)
    return ParsedLayout(instances=survivors, width=ow, height=oh)


def run_inference(
    image: np.ndarray,
    model: LayoutParsingNetwork,
    cfg: InferenceConfig = InferenceConfig(),
    stats: Optional[PipelineStats] = None,
) -> ParsedLayout:
    """Run the fixed prediction pipeline on one image."""
    model.eval()
    pre = preprocess_image(image)
    tensor = torch.from_numpy(pre.image).permute(2, 0, 1).unsqueeze(0)

    with torch.no_grad():
        pyramid = model.feature_pyramid(tensor)
        rpn_logits, rpn_deltas = model.rpn(pyramid)
        spec = model.anchor_spec
        dims = [tuple(level.shape[-2:]) for level in pyramid]
        anchors = generate_anchors(dims, spec)

        prop = rpn_propose(
            torch.sigmoid(rpn_logits).numpy(),
            rpn_deltas.numpy(),
            anchors,
            objectness_floor=cfg.rpn_objectness_floor,
            nms_threshold=cfg.rpn_nms_threshold,
            max_proposals=cfg.proposals_after_nms,
        )
        rois = [
            b
            for b in clip_boxes(prop.boxes, INPUT_SIZE, INPUT_SIZE)
            if b.width >= 1 and b.height >= 1
        ]
        if stats is not None:
            stats.proposal_cap = cfg.proposals_after_nms
            stats.proposals_kept = len(rois)
            stats.detection_cap = cfg.max_detections
            stats.score_floor = cfg.detection_score_floor

        detections = _detect(model, pyramid, rois, cfg)
        if stats is not None:
            stats.detections_kept = len(detections)

    return postprocess_masks(detections, pre, cfg, stats=stats)


def _detect(
    model: LayoutParsingNetwork,
    pyramid: Sequence[torch.Tensor],
    rois: List[Box],
    cfg: InferenceConfig,
) -> List[Detection]:
    """Classify proposals, keep top-scoring above the floor, run the mask head."""
    if not rois:
        return []
    feats = model.roi_features(pyramid, rois, BOX_POOL_SIZE)
    class_logits, box_deltas = model.box_head(feats)
    probs = torch.softmax(class_logits, dim=1).numpy()
    deltas = box_deltas.numpy()

    scored = []
    for i, roi in enumerate(rois):
        cls_idx = int(np.argmax(probs[i]))
        if cls_idx == 0:  # background
            continue
        score = float(probs[i, cls_idx])
        if score > cfg.detection_score_floor:
            scored.append((score, i, cls_idx))
    scored.sort(key=lambda t: (-t[0], t[1]))
    scored = scored[: cfg.max_detections]
    if not scored:
        return []

    refined = []
    for score, i, cls_idx in scored:
        roi_arr = np.array(list(rois[i]))
        box = Box(*decode_box_deltas(roi_arr, deltas[i]))
        box = clip_boxes([box], INPUT_SIZE, INPUT_SIZE)[0]
        refined.append((score, cls_idx, box))

    # the mask head runs only on the surviving detections
    usable = [(s, c, b) for s, c, b in refined if b.width >= 1 and b.height >= 1]
    if not usable:
        return []
    mask_feats = model.roi_features(pyramid, [b for _, _, b in usable], MASK_POOL_SIZE)
    masks = model.mask_head(mask_feats).numpy()
    return [
        Detection(region_class=CLASS_ORDER[c - 1], score=s, box=b, mask28=masks[j])
        for j, (s, c, b) in enumerate(usable)
    ]


def layout_to_document(
    layout: ParsedLayout, doc_id: str, image_path: str, collection: str = "synthetic"
) -> DocumentAnnotation:
    """Serialize predicted instances as polygon regions (corpus schema)."""
    import cv2

    regions: List[RegionInstance] = []
    for inst in layout.instances:
        contours, _ = cv2.findContours(
            inst.mask.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE
        )
        for contour in contours:
            pts = contour.reshape(-1, 2).astype(float)
            if pts.shape[0] < 3:
                continue
            # contour coordinates are pixel indices; shift to pixel edges
            vertices = tuple((float(x) + 0.5, float(y) + 0.5) for x, y in pts)
            regions.append(
                RegionInstance(
                    region_class=inst.region_class,
                    boundary=Polygon(vertices=vertices, shape_kind="polygon"),
                    score=inst.score,
                )
            )
    return DocumentAnnotation(
        doc_id=doc_id,
        image_path=image_path,
        width=layout.width,
        height=layout.height,
        collection=collection,
        regions=regions,
    )
