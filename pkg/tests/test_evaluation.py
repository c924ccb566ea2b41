import numpy as np
import pytest

from manuscript_layout.corpus import (
    DocumentAnnotation,
    Polygon,
    RegionClass,
    RegionInstance,
    ValidationError,
    write_annotation_file,
    write_manifest_file,
    CorpusManifest,
)
from manuscript_layout.evaluation import (
    AP_THRESHOLDS,
    GtInstance,
    PredInstance,
    ap_summary,
    average_precision,
    class_acc_document,
    class_iou_document,
    class_score_corpus,
    emit_report,
    evaluate_instances,
    match_detections,
    render_report,
)

CLS = RegionClass.CHARACTER_LINE_SEGMENT
HOLE = RegionClass.HOLE


def block_mask(h, w, r1, r2, c1, c2):
    m = np.zeros((h, w), dtype=bool)
    m[r1:r2, c1:c2] = True
    return m


def random_mask(rng, h=20, w=20):
    m = np.zeros((h, w), dtype=bool)
    r1, c1 = rng.integers(0, h - 4), rng.integers(0, w - 4)
    m[r1 : r1 + rng.integers(2, 5), c1 : c1 + rng.integers(2, 5)] = True
    return m


class TestMatchDetections:
    def test_identical_pred_is_tp(self):
        gt = block_mask(10, 10, 2, 8, 2, 8)
        result = match_detections([gt.copy()], [0.9], [gt], 1.0)
        assert result.pred_is_tp == [True]
        assert result.gt_matched == [True]

    def test_two_preds_one_gt(self):
        gt = block_mask(10, 10, 2, 8, 2, 8)
        result = match_detections([gt.copy(), gt.copy()], [0.7, 0.9], [gt], 0.5)
        assert result.pred_is_tp == [False, True]  # higher score wins

    def test_matches_greedy_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            preds = [random_mask(rng) for _ in range(10)]
            scores = list(rng.random(10))
            gts = [random_mask(rng) for _ in range(4)]
            result = match_detections(preds, scores, gts, 0.3)
            # replay the greedy rule explicitly
            from manuscript_layout.geometry import mask_iou

            taken = set()
            for i in sorted(range(10), key=lambda i: (-scores[i], i)):
                best, best_iou = None, 0.0
                for j in range(4):
                    if j in taken:
                        continue
                    iou = mask_iou(preds[i], gts[j])
                    if iou >= 0.3 and iou > best_iou:
                        best, best_iou = j, iou
                if best is not None:
                    taken.add(best)
                    assert result.pred_matched_gt[i] == best
                else:
                    assert not result.pred_is_tp[i]


class TestAveragePrecision:
    def test_perfect_predictions(self):
        gts = [GtInstance("d", CLS, block_mask(10, 10, 0, 5, 0, 10)),
               GtInstance("d", CLS, block_mask(10, 10, 6, 10, 0, 10))]
        preds = [PredInstance("d", CLS, 0.9, gts[0].mask.copy()),
                 PredInstance("d", CLS, 0.8, gts[1].mask.copy())]
        assert average_precision(preds, gts, 0.5) == 1.0

    def test_no_predictions(self):
        gts = [GtInstance("d", CLS, block_mask(10, 10, 0, 5, 0, 10))]
        assert average_precision([], gts, 0.5) == 0.0

    def test_hand_computed_five_prediction_case(self):
        # 4 gts; ranked predictions give the TP/FP sequence (TP, FP, TP, TP, FP).
        # PR points: (0.25, 1), (0.25, 0.5), (0.5, 2/3), (0.75, 0.75), (0.75, 0.6)
        # envelope integration: 0.25*1 + 0.25*0.75 + 0.25*0.75 = 0.625
        gts = [GtInstance("d", CLS, block_mask(40, 40, i * 10, i * 10 + 8, 0, 40))
               for i in range(4)]
        far = block_mask(40, 40, 0, 2, 36, 40)
        preds = [
            PredInstance("d", CLS, 0.95, gts[0].mask.copy()),   # TP
            PredInstance("d", CLS, 0.90, far.copy()),           # FP
            PredInstance("d", CLS, 0.85, gts[1].mask.copy()),   # TP
            PredInstance("d", CLS, 0.80, gts[2].mask.copy()),   # TP
            PredInstance("d", CLS, 0.75, far.copy()),           # FP
        ]
        assert average_precision(preds, gts, 0.5) == pytest.approx(0.625)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            gts = [GtInstance("d", CLS, random_mask(rng)) for _ in range(4)]
            preds = [PredInstance("d", CLS, float(rng.random()), random_mask(rng))
                     for _ in range(6)]
            values = [average_precision(preds, gts, t) for t in AP_THRESHOLDS]
            for lo, hi in zip(values[1:], values[:-1]):
                assert lo <= hi + 1e-12

    def test_score_rescaling_invariance(self):
        rng = np.random.default_rng(2)
        gts = [GtInstance("d", CLS, random_mask(rng)) for _ in range(3)]
        preds = [PredInstance("d", CLS, float(rng.random()), random_mask(rng))
                 for _ in range(5)]
        base = ap_summary(preds, gts)
        scaled = [PredInstance(p.doc_id, p.region_class, p.score * 0.3, p.mask)
                  for p in preds]
        assert ap_summary(scaled, gts) == base

    def test_classes_weighted_equally(self):
        gt_cls = GtInstance("d", CLS, block_mask(20, 20, 0, 10, 0, 20))
        gt_hole = GtInstance("d", HOLE, block_mask(20, 20, 12, 18, 2, 8))
        perfect_cls = PredInstance("d", CLS, 0.9, gt_cls.mask.copy())
        # CLS perfect, Hole missed -> mean of 1.0 and 0.0
        assert average_precision([perfect_cls], [gt_cls, gt_hole], 0.5) == 0.5

    def test_summary_matches_independent_calls(self):
        rng = np.random.default_rng(3)
        gts = [GtInstance("d", CLS, random_mask(rng)) for _ in range(3)]
        preds = [PredInstance("d", CLS, float(rng.random()), random_mask(rng))
                 for _ in range(5)]
        a50, a75, amean = ap_summary(preds, gts)
        assert a50 == average_precision(preds, gts, 0.5)
        assert a75 == average_precision(preds, gts, 0.75)
        values = [average_precision(preds, gts, t) for t in AP_THRESHOLDS]
        assert amean == pytest.approx(float(np.mean(values)))


class TestClassWiseScores:
    def test_perfect_single_gt(self):
        gt = block_mask(10, 10, 2, 8, 2, 8)
        assert class_iou_document([gt], [gt.copy()]) == 1.0
        assert class_acc_document([gt], [gt.copy()]) == 1.0

    def test_one_perfect_one_missed(self):
        g1 = block_mask(10, 10, 0, 4, 0, 10)
        g2 = block_mask(10, 10, 6, 10, 0, 10)
        assert class_iou_document([g1, g2], [g1.copy()]) == 0.5

    def test_arithmetic_mean_of_ious(self):
        # gts paired with preds at IoU 0.6, 0.8, 1.0 -> mean 0.8
        gts, preds = [], []
        for i, iou in enumerate([0.6, 0.8, 1.0]):
            width = 100
            gt = block_mask(40, 300, 10 * i, 10 * i + 5, 0, width)
            overlap = int(round(2 * width * iou / (1 + iou)))
            pred = block_mask(40, 300, 10 * i, 10 * i + 5, width - overlap, 2 * width - overlap)
            gts.append(gt)
            preds.append(pred)
            assert abs(
                np.count_nonzero(gt & pred) / np.count_nonzero(gt | pred) - iou
            ) < 0.01
        assert class_iou_document(gts, preds) == pytest.approx(0.8, abs=0.01)

    def test_half_pixel_accuracy(self):
        gt = block_mask(10, 10, 0, 4, 0, 10)
        half = block_mask(10, 10, 0, 2, 0, 10)
        assert class_acc_document([gt], [half]) == 0.5

    def test_two_level_averaging(self):
        assert class_score_corpus([0.5, (0.7 + 0.9) / 2]) == pytest.approx(0.65)

    def test_single_document(self):
        assert class_score_corpus([0.42]) == 0.42

    def test_no_gt_rejected(self):
        with pytest.raises(ValidationError):
            class_iou_document([], [])

    def test_duplicate_document_score_invariance(self):
        scores = [0.3, 0.7]
        base = class_score_corpus(scores)
        assert class_score_corpus(scores + [base]) == pytest.approx(base)


class TestReport:
    def _toy_docs(self):
        poly = Polygon(vertices=((2, 2), (18, 2), (18, 8), (2, 8)))
        hole = Polygon(vertices=((5, 10), (12, 10), (12, 16), (5, 16)))
        doc = DocumentAnnotation(
            doc_id="d0", image_path="d0.png", width=20, height=20, collection="PIH",
            regions=[RegionInstance(CLS, poly), RegionInstance(HOLE, hole)],
        )
        return [doc]

    def test_preds_equal_gts_all_cells_perfect(self, tmp_path):
        docs = self._toy_docs()
        gt_path, pred_path = tmp_path / "gt.json", tmp_path / "pred.json"
        write_annotation_file(docs, gt_path)
        write_annotation_file(docs, pred_path)
        report = emit_report(pred_path, gt_path)
        assert report.ap["Combined"] == (1.0, 1.0, 1.0)
        assert report.cwiou["Combined"][CLS] == 1.0
        assert report.cwacc["Combined"][HOLE] == 1.0
        assert report.cwiou["Combined"][RegionClass.PICTURE] is None
        text = render_report(report)
        assert "100.00" in text and "-" in text

    def test_empty_predictions(self, tmp_path):
        docs = self._toy_docs()
        empty = [DocumentAnnotation(doc_id="d0", image_path="d0.png", width=20,
                                    height=20, collection="PIH", regions=[])]
        gt_path, pred_path = tmp_path / "gt.json", tmp_path / "pred.json"
        write_annotation_file(docs, gt_path)
        write_annotation_file(empty, pred_path)
        report = emit_report(pred_path, gt_path)
        assert report.ap["Combined"] == (0.0, 0.0, 0.0)
        assert report.cwiou["Combined"][CLS] == 0.0

    def test_unknown_pred_doc_rejected(self, tmp_path):
        docs = self._toy_docs()
        stray = [DocumentAnnotation(doc_id="other", image_path="o.png", width=20,
                                    height=20, collection="PIH", regions=[])]
        gt_path, pred_path = tmp_path / "gt.json", tmp_path / "pred.json"
        write_annotation_file(docs, gt_path)
        write_annotation_file(stray, pred_path)
        with pytest.raises(ValidationError, match="other"):
            emit_report(pred_path, gt_path)

    def test_manifest_split_filter(self, tmp_path):
        docs = self._toy_docs()
        gt_path, pred_path = tmp_path / "gt.json", tmp_path / "pred.json"
        manifest_path = tmp_path / "m.json"
        write_annotation_file(docs, gt_path)
        write_annotation_file(docs, pred_path)
        write_manifest_file(CorpusManifest(splits={"d0": "train"}), manifest_path)
        report = emit_report(pred_path, gt_path, manifest_path, split="test")
        assert report.ap["Combined"] == (0.0, 0.0, 0.0)  # nothing in test split

    def test_report_matches_scripted_recount(self):
        rng = np.random.default_rng(5)
        gts, preds = [], []
        for d in range(5):
            doc = f"doc{d}"
            for _ in range(3):
                gts.append(GtInstance(doc, CLS, random_mask(rng)))
            for _ in range(4):
                preds.append(PredInstance(doc, CLS, float(rng.random()), random_mask(rng)))
        report = evaluate_instances(preds, gts)
        # independent recomputation of the CLS cwIoU from raw masks
        doc_scores = []
        for d in range(5):
            doc = f"doc{d}"
            gm = [g.mask for g in gts if g.doc_id == doc]
            pm = [p.mask for p in preds if p.doc_id == doc]
            doc_scores.append(class_iou_document(gm, pm))
        assert report.cwiou["Combined"][CLS] == pytest.approx(float(np.mean(doc_scores)))
        assert report.ap["Combined"][0] == pytest.approx(average_precision(preds, gts, 0.5))
