"""Evaluation metrics: mask AP at IoU thresholds plus document-averaged
class-wise IoU and per-pixel accuracy, with the report tables to match.

AP pools predictions per class across documents and integrates the
precision envelope over recall. The class-wise measures average first
within each document and then across the documents containing the class,
so instance-heavy documents do not dominate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import (
    CorpusManifest,
    DocumentAnnotation,
    RegionClass,
    ValidationError,
    parse_annotation_file,
    parse_manifest_file,
)
from .geometry import mask_iou, rasterize_polygon

AP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass
class PredInstance:
    doc_id: str
    region_class: RegionClass
    score: float
    mask: np.ndarray


@dataclass
class GtInstance:
    doc_id: str
    region_class: RegionClass
    mask: np.ndarray


@dataclass
class MatchResult:
    """Greedy matching outcome for one (document, class) group."""

    pred_is_tp: List[bool]
    pred_matched_gt: List[Optional[int]]
    gt_matched: List[bool]


def match_detections(
    pred_masks: Sequence[np.ndarray],
    pred_scores: Sequence[float],
    gt_masks: Sequence[np.ndarray],
    iou_threshold: float,
) -> MatchResult:
    """Score-ordered greedy matching: each prediction takes the highest-IoU
    still-unmatched gt with IoU >= threshold, else counts as a false positive.
    Ties on score resolve to the lower input index."""
    order = sorted(range(len(pred_masks)), key=lambda i: (-pred_scores[i], i))
    pred_is_tp = [False] * len(pred_masks)
    pred_matched: List[Optional[int]] = [None] * len(pred_masks)
    gt_taken = [False] * len(gt_masks)
    for i in order:
        best_iou = 0.0
        best_j = None
        for j, gt in enumerate(gt_masks):
            if gt_taken[j]:
                continue
            iou = mask_iou(pred_masks[i], gt)
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j is not None:
            pred_is_tp[i] = True
            pred_matched[i] = best_j
            gt_taken[best_j] = True
    return MatchResult(pred_is_tp, pred_matched, gt_taken)


def _pr_auc(tp_flags: Sequence[bool], num_gt: int) -> float:
    """Area under the PR curve with the precision-envelope interpolation."""
    if num_gt == 0:
        return 0.0
    if not tp_flags:
        return 0.0
    tp = np.cumsum([1 if f else 0 for f in tp_flags])
    fp = np.cumsum([0 if f else 1 for f in tp_flags])
    recall = tp / num_gt
    precision = tp / np.maximum(tp + fp, 1)
    # envelope: precision at recall r is the max precision at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    auc = 0.0
    prev_r = 0.0
    for r, p in zip(recall, envelope):
        auc += (r - prev_r) * p
        prev_r = r
    return float(auc)


def _classes_in_gt(gts: Sequence[GtInstance]) -> List[RegionClass]:
    present = {g.region_class for g in gts}
    return [cls for cls in RegionClass if cls in present]


def average_precision(
    preds: Sequence[PredInstance], gts: Sequence[GtInstance], iou_threshold: float
) -> float:
    """Mean AP over the classes present in ground truth (mask IoU matching)."""
    classes = _classes_in_gt(gts)
    if not classes:
        return 0.0
    per_class = [
        _class_ap(preds, gts, cls, iou_threshold) for cls in classes
    ]
    return float(np.mean(per_class))


def _class_ap(
    preds: Sequence[PredInstance],
    gts: Sequence[GtInstance],
    cls: RegionClass,
    iou_threshold: float,
) -> float:
    cls_preds = [(i, p) for i, p in enumerate(preds) if p.region_class is cls]
    cls_gts = [g for g in gts if g.region_class is cls]
    num_gt = len(cls_gts)
    if num_gt == 0:
        return 0.0
    # match within each document, then pool the score-ranked TP/FP sequence
    doc_ids = sorted({g.doc_id for g in cls_gts} | {p.doc_id for _, p in cls_preds})
    flags: List[Tuple[float, int, bool]] = []
    for doc_id in doc_ids:
        dp = [(i, p) for i, p in cls_preds if p.doc_id == doc_id]
        dg = [g for g in cls_gts if g.doc_id == doc_id]
        match = match_detections(
            [p.mask for _, p in dp], [p.score for _, p in dp], [g.mask for g in dg], iou_threshold
        )
        for (orig_idx, p), is_tp in zip(dp, match.pred_is_tp):
            flags.append((p.score, orig_idx, is_tp))
    flags.sort(key=lambda t: (-t[0], t[1]))
    return _pr_auc([f for _, _, f in flags], num_gt)


def ap_summary(
    preds: Sequence[PredInstance], gts: Sequence[GtInstance]
) -> Tuple[float, float, float]:
    """(AP_50, AP_75, mean AP over thresholds 0.50:0.05:0.95)."""
    values = {t: average_precision(preds, gts, t) for t in AP_THRESHOLDS}
    return values[0.5], values[0.75], float(np.mean(list(values.values())))


# ---------------------------------------------------------------------------
# class-wise IoU and pixel accuracy


def _greedy_pairs(
    gt_masks: Sequence[np.ndarray], pred_masks: Sequence[np.ndarray]
) -> List[Tuple[int, int, float]]:
    """Greedy max-IoU pairing without threshold: (gt index, pred index, IoU)."""
    pairs = []
    candidates = [
        (mask_iou(g, p), gi, pi)
        for gi, g in enumerate(gt_masks)
        for pi, p in enumerate(pred_masks)
    ]
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    gt_used = set()
    pred_used = set()
    for iou, gi, pi in candidates:
        if iou <= 0.0:
            break
        if gi in gt_used or pi in pred_used:
            continue
        pairs.append((gi, pi, iou))
        gt_used.add(gi)
        pred_used.add(pi)
    return pairs


def class_iou_document(
    gt_masks: Sequence[np.ndarray], pred_masks: Sequence[np.ndarray]
) -> float:
    """Mean over gt regions of the IoU with their matched prediction (0 if unmatched)."""
    if not gt_masks:
        raise ValidationError("class_iou_document needs at least one gt region")
    scores = [0.0] * len(gt_masks)
    for gi, _, iou in _greedy_pairs(gt_masks, pred_masks):
        scores[gi] = iou
    return float(np.mean(scores))


def class_acc_document(
    gt_masks: Sequence[np.ndarray], pred_masks: Sequence[np.ndarray]
) -> float:
    """Mean over gt regions of the fraction of gt pixels the match recovers."""
    if not gt_masks:
        raise ValidationError("class_acc_document needs at least one gt region")
    scores = [0.0] * len(gt_masks)
    for gi, pi, _ in _greedy_pairs(gt_masks, pred_masks):
        gt = gt_masks[gi]
        total = np.count_nonzero(gt)
        if total > 0:
            scores[gi] = np.count_nonzero(gt & pred_masks[pi]) / total
    return float(np.mean(scores))


def class_score_corpus(per_document_scores: Sequence[float]) -> float:
    """Unweighted mean over the documents that contain the class."""
    if not per_document_scores:
        raise ValidationError("no documents contain this class")
    return float(np.mean(per_document_scores))


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    """AP summary plus per-class tables, per collection and combined."""

    ap: Dict[str, Tuple[float, float, float]]
    cwiou: Dict[str, Dict[RegionClass, Optional[float]]]
    cwacc: Dict[str, Dict[RegionClass, Optional[float]]]

    def to_json(self) -> dict:
        return {
            "ap": {
                coll: {"ap50": v[0], "ap75": v[1], "ap": v[2]} for coll, v in self.ap.items()
            },
            "cwiou": {
                coll: {cls.abbreviation: v for cls, v in row.items()}
                for coll, row in self.cwiou.items()
            },
            "cwacc": {
                coll: {cls.abbreviation: v for cls, v in row.items()}
                for coll, row in self.cwacc.items()
            },
        }


def evaluate_instances(
    preds: Sequence[PredInstance],
    gts: Sequence[GtInstance],
    collections: Optional[Dict[str, str]] = None,
) -> EvalReport:
    """Compute the full report from in-memory instances.

    ``collections`` maps doc_id to collection name; without it everything is
    reported under 'Combined' only.
    """
    groups: Dict[str, Tuple[List[PredInstance], List[GtInstance]]] = {"Combined": (list(preds), list(gts))}
    if collections:
        for coll in sorted(set(collections.values())):
            doc_ids = {d for d, c in collections.items() if c == coll}
            groups[coll] = (
                [p for p in preds if p.doc_id in doc_ids],
                [g for g in gts if g.doc_id in doc_ids],
            )

    ap: Dict[str, Tuple[float, float, float]] = {}
    cwiou: Dict[str, Dict[RegionClass, Optional[float]]] = {}
    cwacc: Dict[str, Dict[RegionClass, Optional[float]]] = {}
    for coll, (cp, cg) in groups.items():
        ap[coll] = ap_summary(cp, cg)
        iou_row: Dict[RegionClass, Optional[float]] = {}
        acc_row: Dict[RegionClass, Optional[float]] = {}
        for cls in RegionClass:
            doc_ids = sorted({g.doc_id for g in cg if g.region_class is cls})
            if not doc_ids:
                iou_row[cls] = None
                acc_row[cls] = None
                continue
            iou_scores, acc_scores = [], []
            for doc_id in doc_ids:
                gm = [g.mask for g in cg if g.doc_id == doc_id and g.region_class is cls]
                pm = [p.mask for p in cp if p.doc_id == doc_id and p.region_class is cls]
                iou_scores.append(class_iou_document(gm, pm))
                acc_scores.append(class_acc_document(gm, pm))
            iou_row[cls] = class_score_corpus(iou_scores)
            acc_row[cls] = class_score_corpus(acc_scores)
        cwiou[coll] = iou_row
        cwacc[coll] = acc_row
    return EvalReport(ap=ap, cwiou=cwiou, cwacc=cwacc)


def documents_to_instances(
    docs: Sequence[DocumentAnnotation], predicted: bool
) -> List[PredInstance] | List[GtInstance]:
    """Rasterize document regions into evaluation instances."""
    out: list = []
    for doc in docs:
        for region in doc.regions:
            mask = rasterize_polygon(region.boundary.vertices, doc.height, doc.width)
            if predicted:
                score = region.score if region.score is not None else 1.0
                out.append(PredInstance(doc.doc_id, region.region_class, score, mask))
            else:
                out.append(GtInstance(doc.doc_id, region.region_class, mask))
    return out


def emit_report(
    pred_path: str | Path,
    gt_path: str | Path,
    manifest_path: Optional[str | Path] = None,
    split: str = "test",
) -> EvalReport:
    """Evaluate a predictions file against a ground-truth file."""
    pred_docs = parse_annotation_file(pred_path)
    gt_docs = parse_annotation_file(gt_path)
    gt_ids = {d.doc_id for d in gt_docs}
    extra = sorted(d.doc_id for d in pred_docs if d.doc_id not in gt_ids)
    if extra:
        raise ValidationError(f"predicted docs missing from ground truth: {extra}")

    if manifest_path is not None:
        manifest = parse_manifest_file(manifest_path)
        keep = set(manifest.doc_ids(split))
        pred_docs = [d for d in pred_docs if d.doc_id in keep]
        gt_docs = [d for d in gt_docs if d.doc_id in keep]

    collections = {d.doc_id: d.collection for d in gt_docs}
    preds = documents_to_instances(pred_docs, predicted=True)
    gts = documents_to_instances(gt_docs, predicted=False)
    return evaluate_instances(preds, gts, collections)


def render_report(report: EvalReport) -> str:
    """Aligned-text tables; values are x100 with two decimals, '-' if absent."""

    def fmt(value: Optional[float]) -> str:
        return "-" if value is None else f"{value * 100:.2f}"

    lines = ["AP at IoU thresholds 50, 75 and overall AP", ""]
    lines.append(f"{'':<12}{'AP50':>8}{'AP75':>8}{'AP':>8}")
    for coll, (a50, a75, amean) in report.ap.items():
        lines.append(f"{coll:<12}{fmt(a50):>8}{fmt(a75):>8}{fmt(amean):>8}")

    lines += ["", "Class-wise average IoU / per-pixel accuracy", ""]
    header = f"{'':<12}" + "".join(f"{cls.abbreviation:>14}" for cls in RegionClass)
    lines.append(header)
    for coll in report.cwiou:
        cells = []
        for cls in RegionClass:
            iou = report.cwiou[coll][cls]
            acc = report.cwacc[coll][cls]
            cells.append(
                f"{'-':>14}" if iou is None else f"{fmt(iou) + '/' + fmt(acc):>14}"
            )
        lines.append(f"{coll:<12}" + "".join(cells))
    return "\n".join(lines)


def write_report(report: EvalReport, path: str | Path) -> None:
    payload = {"report": report.to_json(), "tables": render_report(report)}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
