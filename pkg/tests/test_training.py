import json

import numpy as np
import pytest
import torch

from manuscript_layout.corpus import (
    CorpusManifest,
    DocumentAnnotation,
    Polygon,
    RegionClass,
    RegionInstance,
)
from manuscript_layout.geometry import Box, box_iou
from manuscript_layout.model import LayoutParsingNetwork
from manuscript_layout.synth import SynthConfig, generate_corpus
from manuscript_layout.training import (
    ANCHOR_NEGATIVE_IOU,
    ANCHOR_POSITIVE_IOU,
    DEFAULT_STAGES,
    INPUT_SIZE,
    LABEL_IGNORE,
    LABEL_NEGATIVE,
    LABEL_POSITIVE,
    ROI_SAMPLE_SIZE,
    RPN_NEGATIVE_RATIO,
    RPN_SAMPLE_SIZE,
    OptimizerConfig,
    StageConfig,
    TrainingError,
    assign_anchor_targets,
    box_iou_matrix,
    build_training_sample,
    load_training_config,
    mask_target_from_mask,
    prepare_mask_target,
    preprocess_image,
    run_training,
    sample_rpn_anchors,
    scaled_stages,
    set_trainable_scope,
    _sample_rois,
)

torch.set_num_threads(1)


class TestPreprocess:
    def test_large_image_halved(self):
        image = np.zeros((512, 2048, 3), dtype=np.uint8)
        pre = preprocess_image(image)
        assert pre.scale == 0.5
        assert (pre.content_width, pre.content_height) == (1024, 256)
        assert pre.image.shape == (INPUT_SIZE, INPUT_SIZE, 3)
        assert pre.image.dtype == np.float32

    def test_small_image_kept(self):
        image = np.full((300, 400, 3), 128, dtype=np.uint8)
        pre = preprocess_image(image)
        assert pre.scale == 1.0
        assert (pre.content_width, pre.content_height) == (400, 300)
        # content preserved, padding zero
        assert pre.image[:300, :400].min() == pytest.approx(128 / 255)
        assert pre.image[300:].max() == 0.0
        assert pre.image[:, 400:].max() == 0.0

    def test_grayscale_promoted(self):
        pre = preprocess_image(np.zeros((100, 100), dtype=np.uint8))
        assert pre.image.shape[2] == 3

    def test_tall_image_scaled_by_height(self):
        pre = preprocess_image(np.zeros((2048, 100, 3), dtype=np.uint8))
        assert pre.scale == 0.5
        assert (pre.content_width, pre.content_height) == (50, 1024)

    def test_zero_dimension_rejected(self):
        with pytest.raises(TrainingError):
            preprocess_image(np.zeros((0, 5, 3), dtype=np.uint8))


class TestMaskTargets:
    def test_full_roi_coverage(self):
        full = np.zeros((100, 100), dtype=bool)
        full[10:66, 10:66] = True
        target = mask_target_from_mask(full, Box(10, 10, 66, 66))
        assert target.shape == (28, 28)
        assert target.all()

    def test_half_covered_roi(self):
        # mask fills only the top half of the RoI -> about half the 784 cells
        full = np.zeros((100, 100), dtype=bool)
        full[10:38, 10:66] = True
        target = mask_target_from_mask(full, Box(10, 10, 66, 66))
        assert abs(int(target.sum()) - 392) <= 28

    def test_roi_outside_mask_bounds(self):
        full = np.zeros((50, 50), dtype=bool)
        target = mask_target_from_mask(full, Box(100, 100, 150, 150))
        assert not target.any()

    def test_degenerate_roi_rejected(self):
        with pytest.raises(TrainingError):
            mask_target_from_mask(np.zeros((10, 10), dtype=bool), Box(5, 5, 5, 8))

    def test_prepare_from_region(self):
        region = RegionInstance(
            RegionClass.HOLE, Polygon(vertices=((10, 10), (66, 10), (66, 66), (10, 66)))
        )
        target = prepare_mask_target(region, Box(10, 10, 66, 66), 100, 100)
        assert target.mean() > 0.9


class TestAnchorTargets:
    def _random_boxes(self, rng, n, lo=0, hi=200):
        xy1 = rng.uniform(lo, hi - 20, (n, 2))
        wh = rng.uniform(5, 60, (n, 2))
        return np.concatenate([xy1, xy1 + wh], axis=1)

    def test_iou_matrix_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        a = self._random_boxes(rng, 8)
        b = self._random_boxes(rng, 5)
        mat = box_iou_matrix(a, b)
        for i in range(8):
            for j in range(5):
                assert mat[i, j] == pytest.approx(box_iou(Box(*a[i]), Box(*b[j])))

    def test_labels_follow_thresholds(self):
        rng = np.random.default_rng(1)
        anchors = self._random_boxes(rng, 50)
        gts = self._random_boxes(rng, 4)
        labels, matched = assign_anchor_targets(anchors, gts)
        iou = box_iou_matrix(anchors, gts)
        best = iou.max(axis=1)
        per_gt_best = iou.max(axis=0)
        for i in range(50):
            rescues = [
                j for j in range(4)
                if iou[i, j] == per_gt_best[j] and per_gt_best[j] > 0
            ]
            if best[i] >= ANCHOR_POSITIVE_IOU or rescues:
                assert labels[i] == LABEL_POSITIVE
                if best[i] >= ANCHOR_POSITIVE_IOU:
                    assert matched[i] == iou[i].argmax()
                else:
                    assert matched[i] == rescues[0]
            elif best[i] < ANCHOR_NEGATIVE_IOU:
                assert labels[i] == LABEL_NEGATIVE
            else:
                assert labels[i] == LABEL_IGNORE

    def test_every_gt_gets_an_anchor(self):
        rng = np.random.default_rng(2)
        for trial in range(10):
            anchors = self._random_boxes(rng, 30)
            gts = self._random_boxes(rng, 3)
            labels, matched = assign_anchor_targets(anchors, gts)
            iou = box_iou_matrix(anchors, gts)
            matched_set = set(matched[labels == LABEL_POSITIVE])
            for j in range(3):
                if iou[:, j].max() == 0:
                    continue  # gt untouched by any anchor
                best_anchor = iou[:, j].argmax()
                assert labels[best_anchor] == LABEL_POSITIVE
                # the gt is matched unless its best anchor already clears the
                # positive threshold on a different, more-overlapping gt
                if iou[best_anchor].max() < ANCHOR_POSITIVE_IOU:
                    rescued_gts = np.flatnonzero(
                        iou[best_anchor] == iou.max(axis=0)
                    )
                    if rescued_gts[0] == j:
                        assert j in matched_set

    def test_no_gt_all_negative(self):
        rng = np.random.default_rng(3)
        anchors = self._random_boxes(rng, 10)
        labels, matched = assign_anchor_targets(anchors, np.zeros((0, 4)))
        assert (labels == LABEL_NEGATIVE).all()
        assert (matched == -1).all()

    def test_sampling_caps_and_balance(self):
        labels = np.concatenate([np.full(300, LABEL_POSITIVE), np.full(500, LABEL_NEGATIVE)])
        idx = sample_rpn_anchors(labels, np.random.default_rng(0))
        assert len(idx) == RPN_SAMPLE_SIZE
        assert (labels[idx] == LABEL_POSITIVE).sum() == RPN_SAMPLE_SIZE // 2

    def test_sampling_few_positives(self):
        labels = np.concatenate([np.full(3, LABEL_POSITIVE), np.full(500, LABEL_NEGATIVE)])
        idx = sample_rpn_anchors(labels, np.random.default_rng(0))
        # scarce positives are oversampled to fill their half of the batch
        assert (labels[idx] == LABEL_POSITIVE).sum() == RPN_SAMPLE_SIZE // 2
        assert set(idx[labels[idx] == LABEL_POSITIVE]) == {0, 1, 2}
        assert (labels[idx] == LABEL_NEGATIVE).sum() == RPN_SAMPLE_SIZE // 2

    def test_sampling_no_positives_keeps_one_negative(self):
        labels = np.full(500, LABEL_NEGATIVE)
        idx = sample_rpn_anchors(labels, np.random.default_rng(0))
        assert len(idx) == 1


class TestRoiSampling:
    def _sample(self, gt_boxes, gt_classes, proposals, seed=0):
        sample = type("S", (), {})()
        sample.gt_boxes = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
        sample.gt_classes = np.asarray(gt_classes, dtype=np.int64)
        return _sample_rois(proposals, sample, np.random.default_rng(seed))

    def test_gt_boxes_always_candidates(self):
        rois, labels, matched = self._sample([[10, 10, 50, 50]], [2], [])
        exact = [
            i
            for i, r in enumerate(rois)
            if (r.x1, r.y1, r.x2, r.y2) == (10.0, 10.0, 50.0, 50.0)
        ]
        assert exact, "gt box missing from the sampled RoIs"
        assert labels[exact[0]] == 3  # 1 + class index
        assert matched[exact[0]] == 0
        # every foreground roi here matches the single gt
        assert set(labels) <= {0, 3}

    def test_background_capped_by_ratio(self):
        proposals = [Box(500 + 20 * i, 500, 520 + 20 * i, 520) for i in range(100)]
        rois, labels, _ = self._sample([[10, 10, 50, 50]], [0], proposals)
        n_fg = int((labels > 0).sum())
        n_bg = int((labels == 0).sum())
        assert n_fg >= 1
        assert n_bg <= max(1, round(n_fg * 3))

    def test_background_labelled_zero(self):
        rois, labels, matched = self._sample(
            [[10, 10, 50, 50]], [2], [Box(200, 200, 260, 260)]
        )
        bg = [i for i, lab in enumerate(labels) if lab == 0]
        assert bg, "expected at least one background roi"
        assert all(matched[i] == -1 for i in bg)

    def test_cap_respected(self):
        proposals = [Box(i, i, i + 10, i + 10) for i in range(300)]
        rois, labels, _ = self._sample([[10, 10, 50, 50]], [0], proposals)
        assert len(rois) <= ROI_SAMPLE_SIZE

    def test_no_gt_all_background(self):
        rois, labels, matched = self._sample(
            np.zeros((0, 4)), [], [Box(0, 0, 10, 10), Box(5, 5, 15, 15)]
        )
        assert (labels == 0).all() and (matched == -1).all()


class TestStages:
    def test_default_schedule(self):
        assert [s.epochs for s in DEFAULT_STAGES] == [30, 20, 15]
        assert [s.learning_rate for s in DEFAULT_STAGES] == [1e-3, 1e-3, 1e-4]
        assert [s.trainable_scope for s in DEFAULT_STAGES] == [
            "heads_only", "stage4_and_up", "all"
        ]
        assert [s.mask_loss for s in DEFAULT_STAGES] == ["bce", "focal", "focal"]

    def test_scaled_keeps_everything_but_epochs(self):
        stages = scaled_stages((3, 2, 2))
        assert [s.epochs for s in stages] == [3, 2, 2]
        assert [s.learning_rate for s in stages] == [1e-3, 1e-3, 1e-4]

    def test_bad_scope_rejected(self):
        with pytest.raises(ValueError):
            StageConfig(1, 5, 1e-3, "everything", "bce")

    def test_bad_optimizer_rejected(self):
        with pytest.raises(ValueError):
            OptimizerConfig(momentum=0.0)

    def test_config_file_round_trip(self, tmp_path):
        payload = {
            "stages": [
                {"index": 1, "epochs": 2, "learning_rate": 0.01,
                 "trainable_scope": "all", "mask_loss": "bce"}
            ],
            "optimizer": {"grad_clip_norm": 1.0},
        }
        path = tmp_path / "train.json"
        path.write_text(json.dumps(payload))
        stages, opt = load_training_config(path)
        assert stages[0].epochs == 2 and stages[0].trainable_scope == "all"
        assert opt.grad_clip_norm == 1.0
        assert opt.momentum == 0.9  # default retained


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return LayoutParsingNetwork()


class TestTrainableScope:
    def test_heads_only_freezes_backbone(self, model):
        trainable = set_trainable_scope(model, "heads_only")
        assert all(not p.requires_grad for p in model.backbone.parameters())
        assert all(p.requires_grad for p in model.box_head.parameters())
        assert len(trainable) > 0

    def test_stage4_and_up_opens_layer3(self, model):
        set_trainable_scope(model, "stage4_and_up")
        assert all(p.requires_grad for p in model.backbone.layer3.parameters())
        assert all(not p.requires_grad for p in model.backbone.layer2.parameters())
        assert all(not p.requires_grad for p in model.backbone.stem.parameters())

    def test_all_opens_everything(self, model):
        trainable = set_trainable_scope(model, "all")
        assert len(trainable) == sum(1 for _ in model.parameters())


class TestBuildSample:
    def test_boxes_scaled_into_input_space(self):
        poly = Polygon(vertices=((100, 100), (900, 100), (900, 300), (100, 300)))
        doc = DocumentAnnotation(
            doc_id="d", image_path="d.png", width=2048, height=512,
            regions=[RegionInstance(RegionClass.CHARACTER_LINE_SEGMENT, poly)],
        )
        image = np.zeros((512, 2048, 3), dtype=np.uint8)
        sample = build_training_sample(doc, image)
        assert sample.image.shape == (1, 3, INPUT_SIZE, INPUT_SIZE)
        assert sample.gt_boxes.shape == (1, 4)
        x1, y1, x2, y2 = sample.gt_boxes[0]
        # vertices were halved by preprocessing
        assert abs(x1 - 50) <= 1 and abs(x2 - 450) <= 1
        assert abs(y1 - 50) <= 1 and abs(y2 - 150) <= 1
        assert sample.gt_classes[0] == list(RegionClass).index(
            RegionClass.CHARACTER_LINE_SEGMENT
        )
        assert sample.gt_masks[0].shape == (INPUT_SIZE, INPUT_SIZE)

    def test_empty_document(self):
        doc = DocumentAnnotation(doc_id="d", image_path="d.png", width=100, height=100)
        sample = build_training_sample(doc, np.zeros((100, 100, 3), dtype=np.uint8))
        assert sample.gt_boxes.shape == (0, 4)


class TestRunTraining:
    def test_empty_train_split_rejected(self):
        doc = DocumentAnnotation(doc_id="d", image_path="d.png", width=100, height=100)
        manifest = CorpusManifest(splits={"d": "test"})
        with pytest.raises(TrainingError, match="train split"):
            run_training([doc], manifest, stages=scaled_stages((1, 0, 0)))

    def test_empty_stage_list_rejected(self):
        doc = DocumentAnnotation(doc_id="d", image_path="d.png", width=100, height=100)
        manifest = CorpusManifest(splits={"d": "train"})
        with pytest.raises(TrainingError, match="stage"):
            run_training([doc], manifest, stages=())

    def test_single_epoch_smoke(self, tmp_path):
        cfg = SynthConfig(width=512, height=384, lines_per_page=(2, 2),
                          line_spacing=(40, 50), hole_count=(0, 0),
                          degradation_count=(0, 0))
        docs, manifest = generate_corpus(cfg, 2, (1.0, 0.0, 0.0), seed=3, out_dir=tmp_path)
        ckpt = tmp_path / "model.ckpt"
        model, log = run_training(
            docs,
            manifest,
            stages=scaled_stages((1, 0, 0)),
            seed=5,
            image_root=tmp_path,
            checkpoint_path=ckpt,
        )
        assert ckpt.exists()
        assert len(log) == 1
        record = log[0]
        assert record["epoch"] == 1 and record["stage"] == 1
        for key in ("total", "rpn", "region_class", "box", "mask"):
            assert np.isfinite(record[key])
        assert record["total"] > 0
        assert not model.training  # left in eval mode
