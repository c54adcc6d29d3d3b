"""Target assignment and the multi-task objective.

Torch versions drive training.  The ``*_np`` functions are float-dtype
preserving numpy twins that also return closed-form gradients; they exist so
the analytic gradients can be checked against finite differences.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .geometry import GraspRect, encode_angle

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
DEFAULT_ALPHA = 0.5
DEFAULT_LAMBDA_NEG = 0.1


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class CellTargets:
    """Dense grasp targets on an (h, w) grid, optionally with a leading batch axis.

    ``cls`` is 0 for non-graspable cells, else the angle class; ``reg`` holds
    (dx, dy, log w/stride, log h/stride) and is meaningful only where cls >= 1;
    ``owner`` is the owning object index or -1.
    """

    cls: np.ndarray
    reg: np.ndarray
    owner: np.ndarray
    stride: int

    def for_object(self, k: int) -> "CellTargets":
        keep = self.owner == k
        return CellTargets(
            cls=np.where(keep, self.cls, 0),
            reg=np.where(keep[..., None, :, :], self.reg, 0.0),
            owner=np.where(keep, self.owner, -1),
            stride=self.stride,
        )

    @property
    def positives(self) -> np.ndarray:
        return self.cls >= 1


def stack_targets(targets: Sequence[CellTargets]) -> CellTargets:
    return CellTargets(
        cls=np.stack([t.cls for t in targets]),
        reg=np.stack([t.reg for t in targets]),
        owner=np.stack([t.owner for t in targets]),
        stride=targets[0].stride,
    )


def encode_cell(g: GraspRect, stride: int) -> tuple[int, int, np.ndarray]:
    """Grid cell (row, col) holding the grasp center and its regression target."""
    j = int(math.floor(g.x / stride))
    i = int(math.floor(g.y / stride))
    reg = np.array(
        [
            g.x / stride - (j + 0.5),
            g.y / stride - (i + 0.5),
            math.log(g.w / stride),
            math.log(g.h / stride),
        ]
    )
    return i, j, reg


def assign_targets(sample, stride: int, size: tuple[int, int] | None = None, masks=None) -> CellTargets:
    """Mark, for every object, the cells holding its ground-truth grasp centers.

    A grasp whose center pixel lies outside its object's mask is skipped.
    The first claim on a cell wins.
    """
    height, width = sample.height, sample.width
    if size is None:
        size = (height // stride, width // stride)
    gh, gw = size
    cls = np.zeros((gh, gw), dtype=np.int64)
    reg = np.zeros((4, gh, gw), dtype=np.float64)
    owner = np.full((gh, gw), -1, dtype=np.int64)
    if masks is None:
        masks = sample.object_masks()
    for k, (obj, mask) in enumerate(zip(sample.objects, masks)):
        for g in obj.grasps:
            r, c = int(round(g.y)), int(round(g.x))
            if not (0 <= r < height and 0 <= c < width) or not mask[r, c]:
                log.warning("%s: object %d grasp at (%.1f, %.1f) lies outside its mask, skipped", sample.source_id, k, g.x, g.y)
                continue
            i, j, t = encode_cell(g, stride)
            if not (0 <= i < gh and 0 <= j < gw) or cls[i, j] != 0:
                continue
            cls[i, j] = encode_angle(g.theta)
            reg[:, i, j] = t
            owner[i, j] = k
    return CellTargets(cls=cls, reg=reg, owner=owner, stride=stride)


# -- torch losses -------------------------------------------------------------


def _clamped_log_softmax(logits: torch.Tensor, dim: int) -> torch.Tensor:
    return torch.clamp(torch.log_softmax(logits, dim=dim), min=math.log(LOG_CLAMP))


def seg_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean per-pixel cross-entropy; ``labels`` matches the logits grid."""
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
    if logits.dim() == 3:
        logits = logits[None]
    if labels.dim() == 2:
        labels = labels[None]
    logp = _clamped_log_softmax(logits, dim=1)
    return -logp.gather(1, labels[:, None]).mean()


def smooth_l1(x):
    """0.5 x^2 for |x| < 1, else |x| - 0.5."""
    if not isinstance(x, torch.Tensor):
        ax = abs(float(x))
        return 0.5 * ax * ax if ax < 1.0 else ax - 0.5
    ax = x.abs()
    return torch.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def _batched(targets: CellTargets):
    cls = np.asarray(targets.cls)
    reg = np.asarray(targets.reg)
    owner = np.asarray(targets.owner)
    if cls.ndim == 2:
        cls, reg, owner = cls[None], reg[None], owner[None]
    return cls, reg, owner


def reg_loss(pred_reg: torch.Tensor, targets: CellTargets) -> torch.Tensor:
    """Smooth-L1 over positive cells, averaged within each object, then over objects."""
    cls, reg, owner = _batched(targets)
    if pred_reg.dim() == 3:
        pred_reg = pred_reg[None]
    b, i, j = np.nonzero(cls >= 1)
    if len(b) == 0:
        return pred_reg.sum() * 0.0
    groups = owner[b, i, j] + (owner.max() + 1) * b
    _, group_idx, counts = np.unique(groups, return_inverse=True, return_counts=True)
    bt, it, jt = (torch.as_tensor(a) for a in (b, i, j))
    pred = pred_reg[bt, :, it, jt]  # (P, 4)
    target = torch.as_tensor(reg[b, :, i, j], dtype=pred.dtype)
    per_cell = smooth_l1(pred - target).sum(dim=1)
    weights = torch.as_tensor(1.0 / (counts[group_idx] * len(counts)), dtype=pred.dtype)
    return (per_cell * weights).sum()


def cls_loss(pred_cls: torch.Tensor, targets: CellTargets, lambda_neg: float = DEFAULT_LAMBDA_NEG) -> torch.Tensor:
    """Weighted-mean 20-way cross-entropy; negative cells weigh ``lambda_neg``."""
    cls, _, _ = _batched(targets)
    if pred_cls.dim() == 3:
        pred_cls = pred_cls[None]
    labels = torch.as_tensor(cls, dtype=torch.long)
    one = torch.ones((), dtype=pred_cls.dtype)
    weights = torch.where(labels >= 1, one, one * float(lambda_neg))
    logp = _clamped_log_softmax(pred_cls, dim=1)
    ce = -logp.gather(1, labels[:, None])[:, 0]
    return (weights * ce).sum() / weights.sum()


@dataclass
class LossReport:
    seg: object
    reg: object
    cls: object
    alpha: float
    grasp: object = None
    total: object = None

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("seg", "reg", "cls", "grasp", "total", "alpha")}


def _finite(v) -> bool:
    return math.isfinite(float(v.detach() if isinstance(v, torch.Tensor) else v))


def total_loss(seg, reg, cls, alpha: float = DEFAULT_ALPHA) -> LossReport:
    """grasp = reg + cls; total = seg + alpha * grasp.  Works on floats or tensors."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    for name, v in (("seg", seg), ("reg", reg), ("cls", cls)):
        if not _finite(v):
            raise NonFiniteLossError(f"{name} loss is not finite ({float(v)})")
    grasp = reg + cls
    return LossReport(seg=seg, reg=reg, cls=cls, alpha=alpha, grasp=grasp, total=seg + alpha * grasp)


# -- numpy twins with closed-form gradients -----------------------------------


def _log_softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _onehot(labels: np.ndarray, n: int, axis: int, dtype) -> np.ndarray:
    eye = np.eye(n, dtype=dtype)[labels]  # (..., n)
    return np.moveaxis(eye, -1, axis)


def seg_loss_np(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient of seg_loss for a (C, h, w) logit array."""
    dt = logits.dtype
    logp = _log_softmax_np(logits, axis=0)
    onehot = _onehot(labels, logits.shape[0], 0, dt)
    picked = (logp * onehot).sum(axis=0)
    clamped = picked < math.log(LOG_CLAMP)
    picked = np.maximum(picked, dt.type(math.log(LOG_CLAMP)))
    n = labels.size
    value = -picked.mean(dtype=dt)
    grad = (np.exp(logp) - onehot) / dt.type(n)
    grad = np.where(clamped[None], 0, grad).astype(dt)
    return value, grad


def cls_loss_np(logits: np.ndarray, labels: np.ndarray, lambda_neg: float = DEFAULT_LAMBDA_NEG) -> tuple[float, np.ndarray]:
    dt = logits.dtype
    logp = _log_softmax_np(logits, axis=0)
    onehot = _onehot(labels, logits.shape[0], 0, dt)
    picked = (logp * onehot).sum(axis=0)
    clamped = picked < math.log(LOG_CLAMP)
    picked = np.maximum(picked, dt.type(math.log(LOG_CLAMP)))
    weights = np.where(labels >= 1, 1.0, lambda_neg).astype(dt)
    wsum = weights.sum(dtype=dt)
    value = -(weights * picked).sum(dtype=dt) / wsum
    grad = weights[None] * (np.exp(logp) - onehot) / wsum
    grad = np.where(clamped[None], 0, grad).astype(dt)
    return value, grad


def reg_loss_np(pred: np.ndarray, targets: CellTargets) -> tuple[float, np.ndarray]:
    """Value and gradient of reg_loss for a (4, h, w) prediction (unbatched targets)."""
    dt = pred.dtype
    grad = np.zeros_like(pred)
    i, j = np.nonzero(targets.cls >= 1)
    if len(i) == 0:
        return dt.type(0.0), grad
    _, group_idx, counts = np.unique(targets.owner[i, j], return_inverse=True, return_counts=True)
    diff = pred[:, i, j] - targets.reg[:, i, j].astype(dt)
    ad = np.abs(diff)
    per = np.where(ad < 1, dt.type(0.5) * diff * diff, ad - dt.type(0.5)).sum(axis=0)
    w = (1.0 / (counts[group_idx] * len(counts))).astype(dt)
    value = (per * w).sum(dtype=dt)
    dsl1 = np.where(ad < 1, diff, np.sign(diff))
    grad[:, i, j] = dsl1 * w[None]
    return value, grad


def finite_difference_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central differences of a scalar function, evaluated in ``x``'s dtype."""
    x = np.array(x, copy=True)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    step = x.dtype.type(eps)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = fn(x)
        flat[k] = orig - step
        down = fn(x)
        flat[k] = orig
        gflat[k] = (up - down) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
