"""Backbone, feature fusion, feature filtering and the dense grasp detector."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy import ndimage

from .geometry import GraspRect, decode_angle

N_GRASP_CLASSES = 20  # class 0 = not graspable, 1..19 = angle classes
N_REG = 4
GRASP_FEATURES = ("F3", "C2", "C3", "C4")
GRASP_PRIOR = 0.99


@dataclass
class NetConfig:
    n_categories: int = 3
    channels: tuple = (16, 32, 64, 64, 64)
    grasp_feature: str = "C3"
    use_feature_fusion: bool = True
    seg_hidden: int = 16
    grasp_hidden: int = 64
    grasp_dilations: tuple = (1, 2, 4)
    in_channels: int = 3

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.grasp_dilations = tuple(int(d) for d in self.grasp_dilations)
        if not self.grasp_dilations or min(self.grasp_dilations) < 1:
            raise ValueError(f"grasp_dilations must be positive, got {self.grasp_dilations}")
        if len(self.channels) != 5 or min(self.channels) < 1:
            raise ValueError(f"channels must be five positive widths, got {self.channels}")
        if self.grasp_feature not in GRASP_FEATURES:
            raise ValueError(f"grasp_feature must be one of {GRASP_FEATURES}, got {self.grasp_feature!r}")
        if self.n_categories < 1:
            raise ValueError("n_categories must be >= 1")

    @property
    def grasp_level(self) -> int:
        return int(self.grasp_feature[1])

    @property
    def grasp_fused(self) -> bool:
        return self.use_feature_fusion and self.grasp_feature.startswith("C")

    @property
    def grasp_stride(self) -> int:
        return 2**self.grasp_level

    @property
    def grasp_in_channels(self) -> int:
        k = self.grasp_level
        if self.grasp_fused:
            return sum(self.channels[k - 1 :])
        return self.channels[k - 1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["grasp_dilations"] = list(self.grasp_dilations)
        return d


@dataclass
class GraspMap:
    cls: torch.Tensor  # (..., 20, h, w) logits
    reg: torch.Tensor  # (..., 4, h, w): dx, dy, log w/stride, log h/stride
    stride: int = 8


@dataclass
class Detection:
    category_id: int
    grasp: GraspRect
    confidence: float
    object_index: Optional[int] = None

    def as_dict(self, category_name: Optional[str] = None) -> dict:
        d = {"category_id": int(self.category_id), "confidence": float(self.confidence), "grasp": self.grasp.as_dict()}
        if category_name is not None:
            d["category_name"] = category_name
        if self.object_index is not None:
            d["object_index"] = int(self.object_index)
        return d


class Backbone(nn.Module):
    """Five stride-2 stages; stage k outputs F_k at stride 2**k."""

    def __init__(self, channels: Sequence[int], in_channels: int = 3):
        super().__init__()
        stages = []
        c_in = in_channels
        for c in channels:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(c_in, c, 3, stride=2, padding=1),
                    nn.ReLU(inplace=True),
                    nn.Conv2d(c, c, 3, padding=1),
                    nn.ReLU(inplace=True),
                )
            )
            c_in = c
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def upsample2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest")


def fuse(pyramid: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """C4 = [up(F5), F4], then C_k = [up(C_{k+1}), F_k]; returns [C1, C2, C3, C4]."""
    if len(pyramid) != 5:
        raise ValueError(f"expected five pyramid levels, got {len(pyramid)}")
    fused = []
    c = pyramid[4]
    for k in (3, 2, 1, 0):
        c = torch.cat([upsample2(c), pyramid[k]], dim=1)
        fused.append(c)
    return fused[::-1]


class SegHead(nn.Module):
    """1x1 conv -> ReLU -> 1x1 conv over C1, giving N+1 logits at stride 2.

    C1's channel order is [F5, F4, F3, F2, F1].  Because nearest upsampling
    commutes with a 1x1 convolution, ``forward`` applies the first layer per
    pyramid level before upsampling; ``forward_dense`` takes C1 itself.
    """

    def __init__(self, channels: Sequence[int], n_classes: int, hidden: int = 16):
        super().__init__()
        self.channels = tuple(channels)
        self.reduce = nn.Conv2d(sum(self.channels), hidden, 1)
        self.classify = nn.Conv2d(hidden, n_classes, 1)

    def forward_dense(self, c1: torch.Tensor) -> torch.Tensor:
        return self.classify(F.relu(self.reduce(c1)))

    def forward(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        weight = self.reduce.weight
        offset = 0
        acc = None
        for k in (4, 3, 2, 1, 0):
            width = self.channels[k]
            part = F.conv2d(pyramid[k], weight[:, offset : offset + width])
            offset += width
            acc = part if acc is None else upsample2(acc) + part
        acc = acc + self.reduce.bias.view(1, -1, 1, 1)
        return self.classify(F.relu(acc))


class GraspHead(nn.Module):
    """1x1 reduction, a stack of (dilated) 3x3 convs, then a 1x1 to 24 outputs.

    Dilation widens the view over the filtered map so a cell can see where the
    object's mask ends, which is what locates the grasp center.
    """

    def __init__(self, in_channels: int, hidden: int = 64, dilations: Sequence[int] = (1, 2, 4)):
        super().__init__()
        layers = [nn.Conv2d(in_channels, hidden, 1), nn.ReLU(inplace=True)]
        for d in dilations:
            layers += [nn.Conv2d(hidden, hidden, 3, padding=d, dilation=d), nn.ReLU(inplace=True)]
        self.body = nn.Sequential(*layers)
        self.out = nn.Conv2d(hidden, N_GRASP_CLASSES + N_REG, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        y = self.out(self.body(x))
        return y[:, :N_GRASP_CLASSES], y[:, N_GRASP_CLASSES:]


class SemanticGraspNet(nn.Module):
    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config.channels, config.in_channels)
        self.seg_head = SegHead(config.channels, config.n_categories + 1, config.seg_hidden)
        self.grasp_head = GraspHead(config.grasp_in_channels, config.grasp_hidden, config.grasp_dilations)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)
        nn.init.normal_(self.grasp_head.out.weight, std=0.01)
        nn.init.normal_(self.seg_head.classify.weight, std=0.01)
        # start with P(non-graspable) near its base rate so early steps are not
        # spent learning that almost every cell is empty
        with torch.no_grad():
            self.grasp_head.out.bias[0] = math.log(GRASP_PRIOR * (N_GRASP_CLASSES - 1) / (1 - GRASP_PRIOR))

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        _check_input(x)
        return self.backbone(x)

    def grasp_features(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        k = self.config.grasp_level
        if not self.config.grasp_fused:
            return pyramid[k - 1]
        c = pyramid[4]
        for level in range(3, k - 2, -1):
            c = torch.cat([upsample2(c), pyramid[level]], dim=1)
        return c

    def segment(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        return self.seg_head(pyramid)

    def detect(self, filtered: torch.Tensor) -> GraspMap:
        cls, reg = self.grasp_head(filtered)
        return GraspMap(cls=cls, reg=reg, stride=self.config.grasp_stride)


def _check_input(x: torch.Tensor):
    if x.dim() != 4:
        raise ValueError(f"expected a (B, C, H, W) tensor, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 32 or w % 32:
        raise ValueError(f"input size {h}x{w} is not divisible by 32")


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 image -> (1, 3, H, W) float tensor in [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
    arr = image.astype(np.float32)
    if image.dtype == np.uint8:
        arr /= 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def backbone_forward(image, model: SemanticGraspNet) -> list[torch.Tensor]:
    """Run the backbone on an HxWx3 image (or a BxCxHxW tensor)."""
    x = image if isinstance(image, torch.Tensor) else image_to_tensor(image)
    return model.features(x)


def segment(c1: torch.Tensor, head: SegHead) -> torch.Tensor:
    return head.forward_dense(c1)


def seg_labels(logits: torch.Tensor, size: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Argmax label map, nearest-upsampled to ``size`` when given."""
    labels = logits.argmax(dim=-3)
    if size is not None and tuple(labels.shape[-2:]) != tuple(size):
        fy = size[0] // labels.shape[-2]
        fx = size[1] // labels.shape[-1]
        labels = labels.repeat_interleave(fy, dim=-2).repeat_interleave(fx, dim=-1)
    return labels.cpu().numpy()


_EIGHT = np.ones((3, 3), dtype=bool)


def split_objects(labels: np.ndarray, min_area: int = 64) -> list[tuple[int, np.ndarray]]:
    """Connected components (8-connectivity) of every non-background label.

    Label ``v`` belongs to category ``v - 1``.  Components below ``min_area``
    pixels are dropped.
    """
    labels = np.asarray(labels)
    out = []
    for value in np.unique(labels):
        if value == 0:
            continue
        comp, n = ndimage.label(labels == value, structure=_EIGHT)
        for idx in range(1, n + 1):
            mask = comp == idx
            if mask.sum() >= min_area:
                out.append((int(value) - 1, mask.astype(np.uint8)))
    return out


def reduce_mask(mask, grid: tuple[int, int]) -> torch.Tensor:
    """Max-pool a full-resolution {0, 1} mask down to ``grid``."""
    m = torch.as_tensor(np.asarray(mask) if not isinstance(mask, torch.Tensor) else mask)
    h, w = m.shape[-2:]
    gh, gw = grid
    if h % gh or w % gw or h // gh != w // gw:
        raise ValueError(f"mask {h}x{w} does not reduce onto a {gh}x{gw} grid with a single stride")
    s = h // gh
    m = m.to(torch.float32)
    return m.reshape(*m.shape[:-2], gh, s, gw, s).amax(dim=(-3, -1))


def binarize_and_filter(feature: torch.Tensor, mask) -> torch.Tensor:
    """Hadamard product of ``feature`` with the object mask reduced to its grid."""
    grid = tuple(feature.shape[-2:])
    m = reduce_mask(mask, grid).to(feature.dtype)
    if m.dim() == 3 and feature.dim() == 4:
        m = m[:, None]
    return feature * m


def detect_grasp(filtered: torch.Tensor, head: GraspHead, stride: int = 8) -> GraspMap:
    cls, reg = head(filtered)
    return GraspMap(cls=cls, reg=reg, stride=stride)


def _cell_probs(cls: torch.Tensor) -> np.ndarray:
    return torch.softmax(cls.detach().to(torch.float64), dim=-3).cpu().numpy()


def decode_cell(gmap: GraspMap, i: int, j: int, stride: Optional[int] = None, probs=None) -> tuple[GraspRect, float]:
    """Grasp and confidence predicted at grid cell (row ``i``, column ``j``)."""
    stride = gmap.stride if stride is None else stride
    cls = gmap.cls[0] if gmap.cls.dim() == 4 else gmap.cls
    reg = gmap.reg[0] if gmap.reg.dim() == 4 else gmap.reg
    if probs is None:
        probs = _cell_probs(cls)
    p = probs[:, i, j]
    c = int(np.argmax(p[1:])) + 1
    confidence = float((1.0 - p[0]) * p[c])
    dx, dy, lw, lh = (float(v) for v in reg[:, i, j].detach().to(torch.float64))
    rect = GraspRect(
        x=(j + 0.5 + dx) * stride,
        y=(i + 0.5 + dy) * stride,
        theta=decode_angle(c),
        w=math.exp(lw) * stride,
        h=math.exp(lh) * stride,
    )
    return rect, confidence


def confidence_map(cls: torch.Tensor) -> np.ndarray:
    p = _cell_probs(cls)
    return (1.0 - p[0]) * p[1:].max(axis=0)


def best_cell(gmap: GraspMap, cells: Optional[np.ndarray] = None) -> tuple[GraspRect, float]:
    """Highest-confidence decoded grasp, optionally restricted to ``cells``."""
    cls = gmap.cls[0] if gmap.cls.dim() == 4 else gmap.cls
    probs = _cell_probs(cls)
    conf = (1.0 - probs[0]) * probs[1:].max(axis=0)
    if cells is not None:
        cells = np.asarray(cells, dtype=bool)
        if cells.any():
            conf = np.where(cells, conf, -1.0)
    i, j = np.unravel_index(int(np.argmax(conf)), conf.shape)
    return decode_cell(gmap, int(i), int(j), probs=probs)


@torch.no_grad()
def predict_scene(
    image,
    model: SemanticGraspNet,
    use_gt_masks: Optional[Sequence[tuple[int, np.ndarray]]] = None,
    use_feature_filtering: bool = True,
    min_area: int = 64,
) -> list[Detection]:
    """One Detection (the top-confidence grasp) per object instance.

    Instances come from the segmentation branch unless ``use_gt_masks``
    supplies ``(category_id, mask)`` pairs.
    """
    was_training = model.training
    model.eval()
    try:
        x = image if isinstance(image, torch.Tensor) else image_to_tensor(image)
        pyramid = model.features(x)
        size = tuple(x.shape[-2:])
        if use_gt_masks is None:
            labels = seg_labels(model.segment(pyramid), size)[0]
            instances = split_objects(labels, min_area=min_area)
        else:
            instances = [(int(c), np.asarray(m)) for c, m in use_gt_masks]
        if not instances:
            return []
        feat = model.grasp_features(pyramid)
        grid = tuple(feat.shape[-2:])
        masks = np.stack([m for _, m in instances]).astype(np.float32)
        cells = reduce_mask(masks, grid).numpy() > 0
        if use_feature_filtering:
            batch = binarize_and_filter(feat.expand(len(instances), -1, -1, -1), masks)
            gmap = model.detect(batch)
        else:
            gmap = model.detect(feat)
        detections = []
        for k, (category, _) in enumerate(instances):
            idx = k if use_feature_filtering else 0
            single = GraspMap(gmap.cls[idx], gmap.reg[idx], gmap.stride)
            rect, conf = best_cell(single, cells[k])
            detections.append(
                Detection(
                    category_id=category,
                    grasp=rect,
                    confidence=conf,
                    object_index=k if use_gt_masks is not None else None,
                )
            )
        return detections
    finally:
        model.train(was_training)
