"""Preprocessing, target assignment and the three-stage optimization schedule.

The schedule first tunes the task heads on a frozen backbone, then opens up
stage 4 of the backbone while switching the mask loss to focal, and finally
fine-tunes everything at a reduced learning rate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from . import losses
from .anchors import AnchorSpec, encode_box_deltas, generate_anchors
from .corpus import CorpusManifest, DocumentAnnotation, RegionClass, RegionInstance
from .geometry import Box, binarize, mask_to_box, rasterize_polygon, resize_bilinear
from .model import (
    BOX_POOL_SIZE,
    MASK_POOL_SIZE,
    MASK_SIZE,
    LayoutParsingNetwork,
    save_checkpoint,
)
from .proposals import TRAIN_MAX_PROPOSALS, clip_boxes, rpn_propose

logger = logging.getLogger(__name__)

INPUT_SIZE = 1024

# anchor assignment thresholds (argmax rescue keeps every gt matched)
ANCHOR_POSITIVE_IOU = 0.7
ANCHOR_NEGATIVE_IOU = 0.3
RPN_SAMPLE_SIZE = 256
RPN_POSITIVE_FRACTION = 0.5
RPN_NEGATIVE_RATIO = 5  # negatives sampled per positive when positives are scarce

ROI_SAMPLE_SIZE = 192
ROI_POSITIVE_FRACTION = 0.33
ROI_BG_HARD_IOU = 0.1  # background below this is "easy" (blank/padding)
ROI_FG_IOU = 0.5
# boxes between the background ceiling and the foreground floor are excluded
# from the head losses: at pooled resolution their features are often
# indistinguishable from a true positive, and labelling them background
# drags the matching class toward background with them
ROI_BG_MAX_IOU = 0.3
ROI_CLASS_FG_TARGET = 24  # per-class foreground target met by jittering gts,
# so classes with a single instance per page are not drowned by frequent ones
ROI_GT_JITTER_STD = 0.08  # jitter stddev as a fraction of box width/height
ROI_RANDOM_BG = 32  # randomly placed boxes added so background coverage is
# not limited to wherever the proposal network happens to look

LABEL_POSITIVE = 1
LABEL_NEGATIVE = 0
LABEL_IGNORE = -1


class TrainingError(Exception):
    pass


@dataclass
class PreprocessResult:
    """1024x1024 zero-padded input image plus the metadata to undo it."""

    image: np.ndarray  # (1024, 1024, 3) float32 in [0, 1]
    scale: float
    content_width: int
    content_height: int
    original_width: int
    original_height: int


@dataclass(frozen=True)
class StageConfig:
    index: int
    epochs: int
    learning_rate: float
    trainable_scope: str  # heads_only | stage4_and_up | all
    mask_loss: str  # bce | focal

    def __post_init__(self) -> None:
        if self.trainable_scope not in ("heads_only", "stage4_and_up", "all"):
            raise ValueError(f"unknown trainable scope {self.trainable_scope!r}")
        if self.mask_loss not in ("bce", "focal"):
            raise ValueError(f"unknown mask loss {self.mask_loss!r}")


DEFAULT_STAGES = (
    StageConfig(1, 30, 1e-3, "heads_only", "bce"),
    StageConfig(2, 20, 1e-3, "stage4_and_up", "focal"),
    StageConfig(3, 15, 1e-4, "all", "focal"),
)


def scaled_stages(epochs: Sequence[int]) -> Tuple[StageConfig, ...]:
    """The default schedule with stage epoch counts replaced (desk-scale runs)."""
    return tuple(
        StageConfig(s.index, e, s.learning_rate, s.trainable_scope, s.mask_loss)
        for s, e in zip(DEFAULT_STAGES, epochs)
    )


@dataclass(frozen=True)
class OptimizerConfig:
    momentum: float = 0.9
    weight_decay: float = 1e-3
    batch_size: int = 1
    grad_clip_norm: float = 0.5
    rpn_objectness_floor: float = 0.0  # proposal filtering during training
    focal_gamma: float = 2.0

    def __post_init__(self) -> None:
        if min(self.momentum, self.weight_decay, self.batch_size, self.grad_clip_norm) <= 0:
            raise ValueError("optimizer config values must be positive")


def load_training_config(path: str | Path) -> Tuple[Tuple[StageConfig, ...], OptimizerConfig]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    stages = tuple(StageConfig(**s) for s in payload.get("stages", []))
    if not stages:
        stages = DEFAULT_STAGES
    opt = OptimizerConfig(**payload.get("optimizer", {}))
    return stages, opt


# ---------------------------------------------------------------------------
# preprocessing


def preprocess_image(image: np.ndarray) -> PreprocessResult:
    """Scale so neither side exceeds 1024 px, then zero-pad bottom/right."""
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    h, w = image.shape[:2]
    if h < 1 or w < 1:
        raise TrainingError("image has a zero dimension")
    if image.dtype == np.uint8:
        image = image.astype(np.float32) / 255.0
    image = image.astype(np.float32)

    scale = min(1.0, INPUT_SIZE / w, INPUT_SIZE / h)
    cw = int(round(w * scale))
    ch = int(round(h * scale))
    if (ch, cw) != (h, w):
        content = np.stack(
            [resize_bilinear(image[:, :, c], ch, cw) for c in range(3)], axis=2
        ).astype(np.float32)
    else:
        content = image
    padded = np.zeros((INPUT_SIZE, INPUT_SIZE, 3), dtype=np.float32)
    padded[:ch, :cw] = content
    return PreprocessResult(
        image=padded,
        scale=scale,
        content_width=cw,
        content_height=ch,
        original_width=w,
        original_height=h,
    )


def mask_target_from_mask(full_mask: np.ndarray, roi: Box) -> np.ndarray:
    """Crop a full-resolution binary mask to a RoI and shrink it to 28x28."""
    if roi.width <= 0 or roi.height <= 0:
        raise TrainingError(f"invalid roi {roi}")
    h, w = full_mask.shape
    x1 = max(int(np.floor(roi.x1)), 0)
    y1 = max(int(np.floor(roi.y1)), 0)
    x2 = min(int(np.ceil(roi.x2)), w)
    y2 = min(int(np.ceil(roi.y2)), h)
    if x2 <= x1 or y2 <= y1:
        return np.zeros((MASK_SIZE, MASK_SIZE), dtype=bool)
    crop = full_mask[y1:y2, x1:x2].astype(np.float64)
    return binarize(resize_bilinear(crop, MASK_SIZE, MASK_SIZE), 0.5)


def prepare_mask_target(
    region: RegionInstance, roi: Box, doc_width: int, doc_height: int
) -> np.ndarray:
    """28x28 binary training target for one region within one RoI."""
    full = rasterize_polygon(region.boundary.vertices, doc_height, doc_width)
    return mask_target_from_mask(full, roi)


# ---------------------------------------------------------------------------
# target assignment


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) box arrays."""
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)


def assign_anchor_targets(
    anchors: np.ndarray, gt_boxes: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Label every anchor positive/negative/ignore and record its matched gt.

    Positive: IoU >= 0.7 with some gt, or the anchor attains the best IoU for
    some gt (argmax rescue). Negative: best IoU < 0.3. Otherwise ignored.
    Ties resolve to the lower gt index. Rescue-only anchors are matched to the
    gt they rescue, keeping regression targets for gts below the threshold.
    """
    n = anchors.shape[0]
    if n == 0:
        raise TrainingError("empty anchor list")
    if gt_boxes.size == 0:
        return np.full(n, LABEL_NEGATIVE), np.full(n, -1)
    iou = box_iou_matrix(anchors, gt_boxes)
    best_gt = iou.argmax(axis=1)  # lower index wins ties
    best_iou = iou[np.arange(n), best_gt]

    labels = np.full(n, LABEL_IGNORE)
    labels[best_iou < ANCHOR_NEGATIVE_IOU] = LABEL_NEGATIVE
    labels[best_iou >= ANCHOR_POSITIVE_IOU] = LABEL_POSITIVE
    # argmax rescue: the best anchor(s) for each gt are positive regardless
    per_gt_best = iou.max(axis=0)
    rescue = (iou == per_gt_best[None, :]) & (per_gt_best[None, :] > 0)
    labels[rescue.any(axis=1)] = LABEL_POSITIVE

    matched = np.where(labels == LABEL_POSITIVE, best_gt, -1)
    # rescue-only anchors adopt the gt they rescue (lowest index on ties) so
    # that each gt's best anchor regresses towards it
    adopt = rescue.any(axis=1) & (best_iou < ANCHOR_POSITIVE_IOU)
    matched[adopt] = rescue.argmax(axis=1)[adopt]
    return labels, matched


def sample_rpn_anchors(
    labels: np.ndarray,
    rng: np.random.Generator,
    level_sizes: Sequence[int] | None = None,
    objectness: np.ndarray | None = None,
) -> np.ndarray:
    """Pick a balanced subset of anchor indices for the RPN loss.

    When ``level_sizes`` (anchors per pyramid level, in order) is given, the
    negative budget is split evenly across levels. Uniform sampling would let
    the finest level dominate — it holds the vast majority of anchors — and
    the coarse levels would stay effectively untrained as negatives, leaving
    them free to score arbitrarily high at inference time.

    When ``objectness`` (current per-anchor scores) is given, half the
    negative budget goes to the highest-scoring negatives. A small uniform
    dose per level cannot keep up when tens of thousands of background
    anchors drift upward together; mining the worst offenders directly
    targets whichever family currently floods the proposal ranking.
    """
    pos = np.flatnonzero(labels == LABEL_POSITIVE)
    neg = np.flatnonzero(labels == LABEL_NEGATIVE)
    n_pos = int(RPN_SAMPLE_SIZE * RPN_POSITIVE_FRACTION)
    if len(pos) > n_pos:
        pos = rng.choice(pos, size=n_pos, replace=False)
    elif 0 < len(pos) < n_pos:
        # oversample with replacement up to the positive half of the batch:
        # true positive anchors are scarce (a handful per region) and an
        # unweighted minority would be drowned by the negative pressure on
        # feature maps they share with nearby background cells
        pos = np.concatenate([pos, rng.choice(pos, size=n_pos - len(pos), replace=True)])
    # bound the negative share so a positive-free image cannot fill the
    # whole batch with background
    n_neg = min(len(neg), RPN_SAMPLE_SIZE - len(pos), max(RPN_NEGATIVE_RATIO * len(pos), 1))
    if len(neg) > n_neg:
        hard = np.zeros(0, dtype=np.int64)
        if objectness is not None:
            n_hard = n_neg // 2
            order = neg[np.argsort(-np.asarray(objectness).ravel()[neg], kind="stable")]
            hard = order[:n_hard]
            neg = order[n_hard:]
            n_neg -= len(hard)
        if level_sizes is None:
            neg = rng.choice(neg, size=n_neg, replace=False)
        else:
            bounds = np.cumsum([0] + list(level_sizes))
            per_level = [
                neg[(neg >= lo) & (neg < hi)] for lo, hi in zip(bounds[:-1], bounds[1:])
            ]
            quota = max(1, n_neg // max(len(per_level), 1))
            chosen: List[np.ndarray] = []
            for lvl in per_level:
                take = min(len(lvl), quota)
                if take:
                    chosen.append(rng.choice(lvl, size=take, replace=False))
            picked = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
            short = n_neg - len(picked)
            if short > 0:
                rest = np.setdiff1d(neg, picked, assume_unique=False)
                if len(rest):
                    picked = np.concatenate(
                        [picked, rng.choice(rest, size=min(short, len(rest)), replace=False)]
                    )
            neg = picked[:n_neg]
        neg = np.concatenate([hard, neg])
    return np.concatenate([pos, neg])


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainingSample:
    doc_id: str
    image: torch.Tensor  # (1, 3, 1024, 1024)
    pre: PreprocessResult
    gt_boxes: np.ndarray  # (M, 4) in network input space
    gt_classes: np.ndarray  # (M,) indices into RegionClass order, 0-based
    gt_masks: List[np.ndarray]  # input-space boolean masks


CLASS_ORDER = list(RegionClass)


def build_training_sample(doc: DocumentAnnotation, image: np.ndarray) -> TrainingSample:
    pre = preprocess_image(image)
    boxes, classes, masks = [], [], []
    for region in doc.regions:
        scaled = [(x * pre.scale, y * pre.scale) for x, y in region.boundary.vertices]
        mask = np.zeros((INPUT_SIZE, INPUT_SIZE), dtype=bool)
        content = rasterize_polygon(scaled, pre.content_height, pre.content_width)
        mask[: pre.content_height, : pre.content_width] = content
        box = mask_to_box(mask)
        if box is None:
            logger.warning("doc %s: region rasterizes to empty mask, skipped", doc.doc_id)
            continue
        boxes.append(box)
        classes.append(CLASS_ORDER.index(region.region_class))
        masks.append(mask)
    tensor = torch.from_numpy(pre.image).permute(2, 0, 1).unsqueeze(0)
    return TrainingSample(
        doc_id=doc.doc_id,
        image=tensor,
        pre=pre,
        gt_boxes=np.array([list(b) for b in boxes]).reshape(-1, 4),
        gt_classes=np.asarray(classes, dtype=np.int64),
        gt_masks=masks,
    )


def load_document_image(doc: DocumentAnnotation, image_root: Optional[Path] = None) -> np.ndarray:
    path = Path(doc.image_path)
    if not path.is_absolute() and image_root is not None:
        path = image_root / path
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def set_trainable_scope(model: LayoutParsingNetwork, scope: str) -> List[torch.nn.Parameter]:
    """Flag parameters trainable per stage scope; returns the trainable list."""
    for p in model.parameters():
        p.requires_grad_(True)
    if scope == "heads_only":
        frozen: Iterable[torch.nn.Parameter] = model.backbone.parameters()
    elif scope == "stage4_and_up":
        frozen = (
            list(model.backbone.stem.parameters())
            + list(model.backbone.layer1.parameters())
            + list(model.backbone.layer2.parameters())
        )
    else:
        frozen = []
    for p in frozen:
        p.requires_grad_(False)
    return [p for p in model.parameters() if p.requires_grad]


def _sample_rois(
    proposal_boxes: List[Box],
    sample: TrainingSample,
    rng: np.random.Generator,
) -> Tuple[List[Box], np.ndarray, np.ndarray]:
    """Pick RoIs for the head losses; gt boxes always join the candidate pool.

    Returns (rois, labels, matched_gt): labels are 0 for background else
    1 + class index; matched_gt is -1 for background.
    """
    gt_list = [list(map(float, b)) for b in sample.gt_boxes]
    # jittered gt copies keep the foreground pool populated with the
    # near-miss boxes the heads will actually see after RPN refinement;
    # the copy count is balanced per class so every class reaches roughly
    # the same number of foreground samples per step
    jitter: List[List[float]] = []
    class_counts: Dict[int, int] = {}
    for c in sample.gt_classes:
        class_counts[int(c)] = class_counts.get(int(c), 0) + 1
    for g, c in zip(gt_list, sample.gt_classes):
        n_jit = max(1, round(ROI_CLASS_FG_TARGET / class_counts[int(c)]) - 1)
        w = g[2] - g[0]
        h = g[3] - g[1]
        for _ in range(n_jit):
            noise = rng.normal(0.0, ROI_GT_JITTER_STD, size=4) * np.array([w, h, w, h])
            x1, y1, x2, y2 = np.asarray(g) + noise
            if x2 - x1 >= 1 and y2 - y1 >= 1:
                jitter.append([x1, y1, x2, y2])
    # randomly placed boxes broaden background coverage: at inference time the
    # proposal list includes low-objectness boxes over blank canvas, and the
    # classifier must have seen comparable regions labelled as background
    random_bg: List[List[float]] = []
    gt_arr = np.asarray(gt_list, dtype=float).reshape(-1, 4)
    attempts = 0
    while len(random_bg) < ROI_RANDOM_BG and attempts < ROI_RANDOM_BG * 8:
        attempts += 1
        if gt_list and rng.random() < 0.5:
            g = gt_list[int(rng.integers(len(gt_list)))]
            w = min(g[2] - g[0], INPUT_SIZE - 1.0)
            h = min(g[3] - g[1], INPUT_SIZE - 1.0)
        else:
            w = rng.uniform(20.0, 300.0)
            h = rng.uniform(20.0, 300.0)
        x1 = rng.uniform(0.0, INPUT_SIZE - w)
        y1 = rng.uniform(0.0, INPUT_SIZE - h)
        box = np.array([[x1, y1, x1 + w, y1 + h]])
        # clear negatives only: a random box that lands close to a gt would
        # be labelled background on features the heads cannot tell apart
        # from a true positive, poisoning that class
        if gt_arr.shape[0] and box_iou_matrix(box, gt_arr).max() >= ROI_BG_MAX_IOU:
            continue
        random_bg.append([x1, y1, x1 + w, y1 + h])
    candidates = np.array(
        [list(b) for b in proposal_boxes] + gt_list + jitter + random_bg
    ).reshape(-1, 4)
    if sample.gt_boxes.shape[0] == 0:
        rois = [Box(*row) for row in candidates[:ROI_SAMPLE_SIZE]]
        n = len(rois)
        return rois, np.zeros(n, dtype=np.int64), np.full(n, -1, dtype=np.int64)
    iou = box_iou_matrix(candidates, sample.gt_boxes)
    best_gt = iou.argmax(axis=1)
    best_iou = iou[np.arange(len(candidates)), best_gt]

    fg = np.flatnonzero(best_iou >= ROI_FG_IOU)
    bg = np.flatnonzero(best_iou < ROI_BG_MAX_IOU)
    n_fg = min(len(fg), int(ROI_SAMPLE_SIZE * ROI_POSITIVE_FRACTION))
    if len(fg) > n_fg:
        fg = rng.choice(fg, size=n_fg, replace=False)
    # cap negatives so the batch keeps the configured fg:bg ratio instead of
    # filling up with easy background when few positives exist
    ratio_bg = int(round(len(fg) * (1.0 - ROI_POSITIVE_FRACTION) / ROI_POSITIVE_FRACTION))
    n_bg = min(len(bg), ROI_SAMPLE_SIZE - len(fg), max(ratio_bg, 1))
    if len(bg) > n_bg:
        # split the background budget between near-misses (the boxes the
        # classifier must learn to reject as duplicates) and far-field boxes
        # (blank canvas and padding that flood the inference proposal list)
        hard = bg[best_iou[bg] >= ROI_BG_HARD_IOU]
        easy = bg[best_iou[bg] < ROI_BG_HARD_IOU]
        n_hard = min(len(hard), n_bg // 2)
        n_easy = min(len(easy), n_bg - n_hard)
        n_hard = min(len(hard), n_bg - n_easy)
        parts = []
        if n_hard:
            parts.append(rng.choice(hard, size=n_hard, replace=False))
        if n_easy:
            parts.append(rng.choice(easy, size=n_easy, replace=False))
        bg = np.concatenate(parts) if parts else bg[:0]
    chosen = np.concatenate([fg, bg]).astype(np.int64)

    rois = [Box(*candidates[i]) for i in chosen]
    labels = np.where(
        best_iou[chosen] >= ROI_FG_IOU, 1 + sample.gt_classes[best_gt[chosen]], 0
    )
    matched = np.where(best_iou[chosen] >= ROI_FG_IOU, best_gt[chosen], -1)
    return rois, labels, matched


def train_step(
    model: LayoutParsingNetwork,
    sample: TrainingSample,
    anchors: np.ndarray,
    stage: StageConfig,
    opt_cfg: OptimizerConfig,
    rng: np.random.Generator,
) -> losses.LossComponents:
    """Forward pass and loss computation for one image."""
    pyramid = model.feature_pyramid(sample.image)
    rpn_logits, rpn_deltas = model.rpn(pyramid)

    # --- RPN losses (classification + anchor box regression)
    labels, matched = assign_anchor_targets(anchors, sample.gt_boxes)
    cells = [level.shape[-2] * level.shape[-1] for level in pyramid]
    per_cell = anchors.shape[0] // sum(cells)
    with torch.no_grad():
        objectness = torch.sigmoid(rpn_logits).numpy()
    idx = sample_rpn_anchors(
        labels, rng, level_sizes=[c * per_cell for c in cells], objectness=objectness
    )
    target = torch.from_numpy((labels[idx] == LABEL_POSITIVE).astype(np.float32))
    rpn_cls = torch.nn.functional.binary_cross_entropy_with_logits(rpn_logits[idx], target)
    pos = idx[labels[idx] == LABEL_POSITIVE]
    if pos.size > 0:
        delta_targets = encode_box_deltas(anchors[pos], sample.gt_boxes[matched[pos]])
        rpn_box = losses.smooth_l1(
            rpn_deltas[pos], torch.from_numpy(delta_targets).to(rpn_deltas.dtype)
        )
    else:
        rpn_box = rpn_logits.sum() * 0.0
    rpn_loss = rpn_cls + rpn_box

    # --- proposals (no gradient through the proposal coordinates)
    prop = rpn_propose(
        objectness,
        rpn_deltas.detach().numpy(),
        anchors,
        objectness_floor=opt_cfg.rpn_objectness_floor,
        nms_threshold=0.7,
        max_proposals=TRAIN_MAX_PROPOSALS,
    )
    boxes = [
        b
        for b in clip_boxes(prop.boxes, INPUT_SIZE, INPUT_SIZE)
        if b.width >= 1 and b.height >= 1
    ]
    rois, roi_labels, roi_matched = _sample_rois(boxes, sample, rng)

    zero = rpn_logits.sum() * 0.0
    if not rois:
        return losses.LossComponents(rpn=rpn_loss, region_class=zero, box=zero, mask=zero)

    feats = model.roi_features(pyramid, rois, BOX_POOL_SIZE)
    class_logits, box_deltas = model.box_head(feats)
    cls_loss = torch.nn.functional.cross_entropy(
        class_logits, torch.from_numpy(roi_labels).long()
    )

    fg = np.flatnonzero(roi_labels > 0)
    if fg.size > 0:
        roi_arr = np.array([list(rois[i]) for i in fg])
        gt_arr = sample.gt_boxes[roi_matched[fg]]
        targets = encode_box_deltas(roi_arr, gt_arr)
        box_loss = losses.smooth_l1(
            box_deltas[fg], torch.from_numpy(targets).to(box_deltas.dtype)
        )

        mask_feats = model.roi_features(pyramid, [rois[i] for i in fg], MASK_POOL_SIZE)
        mask_pred = model.mask_head(mask_feats)
        mask_targets = np.stack(
            [
                mask_target_from_mask(sample.gt_masks[roi_matched[i]], rois[i])
                for i in fg
            ]
        )
        target_t = torch.from_numpy(mask_targets.astype(np.float32))
        if stage.mask_loss == "focal":
            mask_loss = losses.mask_focal(mask_pred, target_t, gamma=opt_cfg.focal_gamma)
        else:
            mask_loss = losses.mask_bce(mask_pred, target_t)
    else:
        box_loss = zero
        mask_loss = zero

    return losses.LossComponents(
        rpn=rpn_loss, region_class=cls_loss, box=box_loss, mask=mask_loss
    )


def run_training(
    docs: Sequence[DocumentAnnotation],
    manifest: CorpusManifest,
    stages: Sequence[StageConfig] = DEFAULT_STAGES,
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    weights: losses.LossWeights = losses.LossWeights(),
    image_root: Optional[Path] = None,
    backbone_weights: Optional[str] = None,
    checkpoint_path: Optional[Path] = None,
) -> Tuple[LayoutParsingNetwork, List[dict]]:
    """Run the staged schedule; returns the trained model and per-epoch log.

    Deterministic for a fixed seed and thread count: model init, shuffling
    and target sampling all derive from ``seed``.
    """
    if not stages:
        raise TrainingError("stage list is empty")
    train_ids = set(manifest.doc_ids("train"))
    train_docs = [d for d in docs if d.doc_id in train_ids]
    if not train_docs:
        raise TrainingError("train split is empty")

    torch.manual_seed(seed)
    model = LayoutParsingNetwork()
    model.load_backbone_weights(backbone_weights)
    model.train()

    samples = [
        build_training_sample(doc, load_document_image(doc, image_root)) for doc in train_docs
    ]
    pyramid_dims = _pyramid_dims(model.anchor_spec)
    anchors = generate_anchors(pyramid_dims, model.anchor_spec)

    loss_log: List[dict] = []
    epoch_counter = 0
    for stage in stages:
        trainable = set_trainable_scope(model, stage.trainable_scope)
        optimizer = torch.optim.SGD(
            trainable,
            lr=stage.learning_rate,
            momentum=opt_cfg.momentum,
            weight_decay=opt_cfg.weight_decay,
        )
        for stage_epoch in range(stage.epochs):
            epoch_counter += 1
            rng = np.random.default_rng([seed, stage.index, stage_epoch])
            order = rng.permutation(len(samples))
            totals = {"total": 0.0, "rpn": 0.0, "region_class": 0.0, "box": 0.0, "mask": 0.0}
            for si in order:
                optimizer.zero_grad()
                components = train_step(model, samples[si], anchors, stage, opt_cfg, rng)
                total = losses.total_loss(components, weights)
                if not torch.isfinite(total):
                    bad = [
                        name
                        for name, value in components.detached().items()
                        if not np.isfinite(value)
                    ]
                    raise TrainingError(
                        f"non-finite loss component(s) {bad} on doc {samples[si].doc_id}"
                    )
                total.backward()
                # clip each gradient tensor to the norm bound individually
                # (Keras clipnorm semantics); a single global norm would let
                # the largest head starve every other parameter group
                for param in trainable:
                    torch.nn.utils.clip_grad_norm_([param], opt_cfg.grad_clip_norm)
                optimizer.step()
                totals["total"] += float(total.detach())
                for name, value in components.detached().items():
                    totals[name] += value
            n = len(samples)
            record = {
                "epoch": epoch_counter,
                "stage": stage.index,
                **{k: v / n for k, v in totals.items()},
            }
            loss_log.append(record)
            logger.info(
                "epoch %d (stage %d): total %.4f", epoch_counter, stage.index, record["total"]
            )

    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return model, loss_log


def _pyramid_dims(spec: AnchorSpec) -> List[Tuple[int, int]]:
    dims = []
    for stride in spec.strides:
        side = -(-INPUT_SIZE // stride)  # ceil division
        dims.append((side, side))
    return dims


def write_loss_log(log: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
