"""Instance segmentation network: truncated ResNet-50 backbone, feature
pyramid, region proposal head and the three task heads.

The backbone keeps the first four blocks of ResNet-50 (through layer3); the
pyramid adds two pooled levels on top, giving five levels with strides
4, 8, 16, 32 and 64. Batch norm layers are frozen throughout (batch size is
1, so per-batch statistics would be meaningless).
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from .anchors import AnchorSpec
from .geometry import Box

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
NUM_REGION_CLASSES = 9  # foreground classes; class index 0 is background
FPN_CHANNELS = 256
MASK_SIZE = 28
BOX_POOL_SIZE = 7
MASK_POOL_SIZE = 14

IMAGE_MEAN = (0.485, 0.456, 0.406)
IMAGE_STD = (0.229, 0.224, 0.225)


class CheckpointError(Exception):
    pass


class FrozenBatchNorm2d(nn.Module):
    """BatchNorm with fixed affine parameters and statistics."""

    def __init__(self, num_features: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.register_buffer("weight", torch.ones(num_features))
        self.register_buffer("bias", torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        scale = self.weight * (self.running_var + self.eps).rsqrt()
        shift = self.bias - self.running_mean * scale
        return x * scale[None, :, None, None] + shift[None, :, None, None]


def _freeze_batchnorm(module: nn.Module) -> nn.Module:
    for name, child in module.named_children():
        if isinstance(child, nn.BatchNorm2d):
            frozen = FrozenBatchNorm2d(child.num_features, child.eps)
            frozen.weight.copy_(child.weight.detach())
            frozen.bias.copy_(child.bias.detach())
            frozen.running_mean.copy_(child.running_mean)
            frozen.running_var.copy_(child.running_var)
            setattr(module, name, frozen)
        else:
            _freeze_batchnorm(child)
    return module


class Backbone(nn.Module):
    """First four blocks of ResNet-50, exposing C2/C3/C4 feature maps."""

    def __init__(self):
        super().__init__()
        resnet = torchvision.models.resnet50(weights=None)
        self.stem = nn.Sequential(resnet.conv1, resnet.bn1, resnet.relu, resnet.maxpool)
        self.layer1 = resnet.layer1  # stage 2, stride 4
        self.layer2 = resnet.layer2  # stage 3, stride 8
        self.layer3 = resnet.layer3  # stage 4, stride 16
        _freeze_batchnorm(self)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        x = self.stem(x)
        c2 = self.layer1(x)
        c3 = self.layer2(c2)
        c4 = self.layer3(c3)
        return c2, c3, c4


class FeaturePyramid(nn.Module):
    """Top-down pyramid over C2-C4 plus two pooled levels (strides 32, 64)."""

    def __init__(self, channels: int = FPN_CHANNELS):
        super().__init__()
        self.lateral2 = nn.Conv2d(256, channels, 1)
        self.lateral3 = nn.Conv2d(512, channels, 1)
        self.lateral4 = nn.Conv2d(1024, channels, 1)
        self.out2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.out3 = nn.Conv2d(channels, channels, 3, padding=1)
        self.out4 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, c2, c3, c4) -> List[torch.Tensor]:
        p4 = self.lateral4(c4)
        p3 = self.lateral3(c3) + F.interpolate(p4, size=c3.shape[-2:], mode="nearest")
        p2 = self.lateral2(c2) + F.interpolate(p3, size=c2.shape[-2:], mode="nearest")
        p2, p3, p4 = self.out2(p2), self.out3(p3), self.out4(p4)
        p5 = F.max_pool2d(p4, kernel_size=1, stride=2, ceil_mode=True)
        p6 = F.max_pool2d(p5, kernel_size=1, stride=2, ceil_mode=True)
        return [p2, p3, p4, p5, p6]


class RpnHead(nn.Module):
    """Shared conv head predicting objectness and box deltas per anchor."""

    def __init__(self, channels: int = FPN_CHANNELS, anchors_per_cell: int = 3):
        super().__init__()
        self.anchors_per_cell = anchors_per_cell
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.objectness = nn.Conv2d(channels, anchors_per_cell, 1)
        self.deltas = nn.Conv2d(channels, anchors_per_cell * 4, 1)
        for layer in (self.conv, self.objectness, self.deltas):
            nn.init.normal_(layer.weight, std=0.01)
            nn.init.zeros_(layer.bias)
        # bias objectness towards background so early proposals are sparse
        nn.init.constant_(self.objectness.bias, -2.0)

    def forward(self, pyramid: Sequence[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (logits (N,), deltas (N, 4)) flattened in anchor order."""
        logits, deltas = [], []
        for feat in pyramid:
            h = F.relu(self.conv(feat))
            obj = self.objectness(h)  # (1, A, H, W)
            reg = self.deltas(h)  # (1, 4A, H, W)
            a = self.anchors_per_cell
            # anchor order is row-major over cells, ratio-minor
            logits.append(obj.permute(0, 2, 3, 1).reshape(-1))
            deltas.append(reg.view(1, a, 4, *reg.shape[-2:]).permute(0, 3, 4, 1, 2).reshape(-1, 4))
        return torch.cat(logits), torch.cat(deltas)


class BoxHead(nn.Module):
    """Two-layer MLP over pooled RoI features -> class logits + box deltas.

    The classifier output is multiplied by a fixed gain. Training clips
    gradients per tensor, which caps how far the final layer can move per
    step regardless of loss magnitude; the gain multiplies the logit change
    obtained per unit of weight movement, letting the classifier calibrate
    within short schedules. The layer starts at zero so initial class
    probabilities are uniform and the gain amplifies nothing at the start.
    """

    CLASS_LOGIT_GAIN = 20.0

    def __init__(self, channels: int = FPN_CHANNELS, num_classes: int = NUM_REGION_CLASSES):
        super().__init__()
        in_dim = channels * BOX_POOL_SIZE * BOX_POOL_SIZE
        self.fc1 = nn.Linear(in_dim, 1024)
        self.fc2 = nn.Linear(1024, 1024)
        self.class_logits = nn.Linear(1024, num_classes + 1)
        self.box_deltas = nn.Linear(1024, 4)  # class-agnostic regression
        nn.init.zeros_(self.class_logits.weight)
        nn.init.zeros_(self.class_logits.bias)
        # zero init: refinement starts as the identity and can only improve
        nn.init.zeros_(self.box_deltas.weight)
        nn.init.zeros_(self.box_deltas.bias)

    def forward(self, feats: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x = feats.flatten(1)
        x = F.relu(self.fc1(x))
        x = F.relu(self.fc2(x))
        return self.class_logits(x) * self.CLASS_LOGIT_GAIN, self.box_deltas(x)


class MaskHead(nn.Module):
    """Fully convolutional head producing a 28x28 soft mask per RoI."""

    def __init__(self, channels: int = FPN_CHANNELS):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.upsample = nn.ConvTranspose2d(channels, channels, 2, stride=2)
        self.predict = nn.Conv2d(channels, 1, 1)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        x = self.convs(feats)
        x = F.relu(self.upsample(x))
        return torch.sigmoid(self.predict(x)).squeeze(1)  # (N, 28, 28)


def bilinear_sample(feat: torch.Tensor, xs: torch.Tensor, ys: torch.Tensor) -> torch.Tensor:
    """Sample a (C, H, W) map at float feature coordinates, clamped at borders."""
    _, h, w = feat.shape
    xs = xs.clamp(0.0, w - 1.0)
    ys = ys.clamp(0.0, h - 1.0)
    x0 = xs.floor().long()
    y0 = ys.floor().long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    wx = (xs - x0.to(xs.dtype)).unsqueeze(0)
    wy = (ys - y0.to(ys.dtype)).unsqueeze(0)
    f00 = feat[:, y0, x0]
    f01 = feat[:, y0, x1]
    f10 = feat[:, y1, x0]
    f11 = feat[:, y1, x1]
    return (
        f00 * (1 - wy) * (1 - wx)
        + f01 * (1 - wy) * wx
        + f10 * wy * (1 - wx)
        + f11 * wy * wx
    )


def assign_pyramid_level(roi: Box, num_levels: int = 4, canonical: float = 224.0) -> int:
    """Standard FPN assignment: level index grows with log2 of the RoI size."""
    size = math.sqrt(max(roi.area, 1e-12))
    k = math.floor(4 + math.log2(size / canonical))
    return int(min(max(k - 2, 0), num_levels - 1))


def roi_warp(
    pyramid: Sequence[torch.Tensor],
    strides: Sequence[int],
    roi: Box,
    out_size: int,
) -> torch.Tensor:
    """Bilinearly warp one RoI into a (C, out_size, out_size) feature patch.

    Samples at output cell centers; image coordinates map to feature
    coordinates via x / stride - 0.5 (align-corners-false).
    """
    if roi.width <= 0 or roi.height <= 0:
        raise ValueError(f"degenerate roi {roi}")
    level = assign_pyramid_level(roi)
    feat = pyramid[level][0]  # (C, H, W)
    stride = strides[level]
    xs = torch.linspace(0, out_size - 1, out_size, dtype=feat.dtype) + 0.5
    xs = roi.x1 + xs * (roi.width / out_size)
    ys = torch.linspace(0, out_size - 1, out_size, dtype=feat.dtype) + 0.5
    ys = roi.y1 + ys * (roi.height / out_size)
    fx = xs / stride - 0.5
    fy = ys / stride - 0.5
    gy, gx = torch.meshgrid(fy, fx, indexing="ij")
    return bilinear_sample(feat, gx.reshape(-1), gy.reshape(-1)).view(
        feat.shape[0], out_size, out_size
    )


class LayoutParsingNetwork(nn.Module):
    """The full network; callers drive RPN and heads explicitly."""

    def __init__(self, anchor_spec: AnchorSpec = AnchorSpec()):
        super().__init__()
        self.anchor_spec = anchor_spec
        self.backbone = Backbone()
        self.fpn = FeaturePyramid()
        self.rpn = RpnHead(anchors_per_cell=len(anchor_spec.aspect_ratios))
        self.box_head = BoxHead()
        self.mask_head = MaskHead()
        mean = torch.tensor(IMAGE_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGE_STD).view(1, 3, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)

    def normalize(self, image: torch.Tensor) -> torch.Tensor:
        """Scale a (1, 3, H, W) float image in [0, 1] to normalized input."""
        return (image - self.input_mean) / self.input_std

    def feature_pyramid(self, image: torch.Tensor) -> List[torch.Tensor]:
        c2, c3, c4 = self.backbone(self.normalize(image))
        return self.fpn(c2, c3, c4)

    def roi_features(
        self, pyramid: Sequence[torch.Tensor], rois: Sequence[Box], out_size: int
    ) -> torch.Tensor:
        if not rois:
            return torch.zeros((0, FPN_CHANNELS, out_size, out_size))
        patches = [roi_warp(pyramid, self.anchor_spec.strides, roi, out_size) for roi in rois]
        return torch.stack(patches)

    def load_backbone_weights(self, path: Optional[str]) -> None:
        """Load pretrained backbone weights if a file is given.

        Without a weights file the backbone keeps its seeded random init,
        which is fine for desk-scale runs but not for real corpora.
        """
        if path is None:
            logger.warning(
                "NO PRETRAINED BACKBONE WEIGHTS SUPPLIED - using seeded random "
                "initialization; expect weak features on real manuscript corpora"
            )
            return
        state = torch.load(path, map_location="cpu", weights_only=True)
        missing, unexpected = self.backbone.load_state_dict(state, strict=False)
        logger.info(
            "loaded backbone weights from %s (%d missing, %d unexpected keys)",
            path,
            len(missing),
            len(unexpected),
        )


def save_checkpoint(model: LayoutParsingNetwork, path: str | Path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "anchor_spec": model.anchor_spec.to_json(),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> LayoutParsingNetwork:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path}: unsupported format version {payload.get('format_version')}"
        )
    model = LayoutParsingNetwork(anchor_spec=AnchorSpec.from_json(payload["anchor_spec"]))
    state = payload["state_dict"]
    for name, param in model.state_dict().items():
        if name in state and state[name].shape != param.shape:
            raise CheckpointError(
                f"checkpoint {path}: shape mismatch at layer {name!r}: "
                f"{tuple(state[name].shape)} vs {tuple(param.shape)}"
            )
    model.load_state_dict(state)
    model.eval()
    return model
