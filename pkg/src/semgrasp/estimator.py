"""``SemanticGraspDetector``: the full model behind a fit/predict/score API."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .data.augment import augment, augmentation_grid
from .data.scene import SceneSample
from .evaluation import EvalResult, evaluate
from .losses import LossReport, assign_targets, cls_loss, reg_loss, seg_loss, stack_targets, total_loss
from .network import (
    Detection,
    NetConfig,
    SemanticGraspNet,
    binarize_and_filter,
    image_to_tensor,
    predict_scene,
    seg_labels,
    split_objects,
)
from .validation import center_crop, check_image, check_samples, prepare_sample

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_ARCH_FIELDS = ("n_categories", "channels", "grasp_feature", "use_feature_fusion", "input_mode")


class CheckpointError(ValueError):
    pass


@dataclass
class _Prepared:
    x: torch.Tensor
    seg_target: np.ndarray
    masks: np.ndarray  # (K, H, W)
    targets: object
    categories: list[int]


class SemanticGraspDetector(BaseEstimator):
    """Semantic segmentation plus per-object grasp detection.

    ``fit`` takes a list of SceneSample; ``predict`` takes SceneSamples or
    HxWx3 images and returns, per input, one Detection per object instance.
    """

    def __init__(
        self,
        n_categories: Optional[int] = None,
        channels=(16, 32, 64, 64, 64),
        grasp_feature: str = "C3",
        use_feature_filtering: bool = True,
        use_feature_fusion: bool = True,
        input_mode: str = "rgb",
        alpha: float = 0.5,
        lambda_neg: float = 0.1,
        epochs: int = 100,
        batch_size: int = 1,
        learning_rate: float = 1e-4,
        lr_decay_per_epoch: float = 8e-5,
        seed: int = 0,
        deterministic: bool = True,
        augment: bool = True,
        teacher_forcing: bool = True,
        inference_masks: str = "predicted",
        min_area: int = 64,
        verbose: bool = False,
    ):
        self.n_categories = n_categories
        self.channels = channels
        self.grasp_feature = grasp_feature
        self.use_feature_filtering = use_feature_filtering
        self.use_feature_fusion = use_feature_fusion
        self.input_mode = input_mode
        self.alpha = alpha
        self.lambda_neg = lambda_neg
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay_per_epoch = lr_decay_per_epoch
        self.seed = seed
        self.deterministic = deterministic
        self.augment = augment
        self.teacher_forcing = teacher_forcing
        self.inference_masks = inference_masks
        self.min_area = min_area
        self.verbose = verbose

    @classmethod
    def from_config(cls, cfg: RunConfig, **overrides) -> "SemanticGraspDetector":
        names = cls._get_param_names()
        params = {k: v for k, v in cfg.to_dict().items() if k in names}
        params["channels"] = tuple(params["channels"])
        params.update(overrides)
        return cls(**params)

    # -- training ----------------------------------------------------------

    def _net_config(self, n_categories: int) -> NetConfig:
        return NetConfig(
            n_categories=n_categories,
            channels=tuple(self.channels),
            grasp_feature=self.grasp_feature,
            use_feature_fusion=self.use_feature_fusion,
        )

    def _seed_everything(self):
        torch.manual_seed(self.seed)
        if self.deterministic:
            torch.use_deterministic_algorithms(True)
            torch.set_num_threads(1)

    def learning_rate_at(self, epoch: int) -> float:
        """Inverse-time decay: lr / (1 + decay * epoch)."""
        return self.learning_rate / (1.0 + self.lr_decay_per_epoch * epoch)

    def _prepare(self, sample: SceneSample) -> _Prepared:
        sample = prepare_sample(sample, self.input_mode)
        labels = sample.label_map()
        masks = np.stack(sample.object_masks()) if sample.objects else np.zeros((0,) + labels.shape, np.uint8)
        stride = self.net_.config.grasp_stride
        targets = assign_targets(sample, stride, masks=masks)
        return _Prepared(
            x=image_to_tensor(sample.image),
            seg_target=labels[::2, ::2],
            masks=masks,
            targets=targets,
            categories=[o.category_id for o in sample.objects],
        )

    def _training_masks(self, seg_logits: torch.Tensor, item: _Prepared) -> np.ndarray:
        """Predicted instance masks standing in for ground truth where they agree (IoU >= 0.5)."""
        if self.teacher_forcing or len(item.masks) == 0:
            return item.masks
        labels = seg_labels(seg_logits.detach(), item.masks.shape[1:])[0]
        instances = split_objects(labels, self.min_area)
        out = item.masks.copy()
        for k, (gt, cat) in enumerate(zip(item.masks, item.categories)):
            best, best_iou = None, 0.5
            for c, m in instances:
                if c != cat:
                    continue
                inter = np.logical_and(m, gt).sum()
                iou = inter / max(1, np.logical_or(m, gt).sum())
                if iou >= best_iou:
                    best, best_iou = m, iou
            if best is not None:
                out[k] = best
        return out

    def _step_loss(self, item: _Prepared) -> LossReport:
        net = self.net_
        pyramid = net.features(item.x)
        seg_logits = net.segment(pyramid)
        l_seg = seg_loss(seg_logits, item.seg_target)
        feat = net.grasp_features(pyramid)
        k = len(item.masks)
        if k == 0:
            zero = feat.sum() * 0.0
            return total_loss(l_seg, zero, zero, self.alpha)
        if self.use_feature_filtering:
            masks = self._training_masks(seg_logits, item)
            gmap = net.detect(binarize_and_filter(feat.expand(k, -1, -1, -1), masks))
            targets = stack_targets([item.targets.for_object(i) for i in range(k)])
        else:
            gmap = net.detect(feat)
            targets = item.targets
        l_reg = reg_loss(gmap.reg, targets)
        l_cls = cls_loss(gmap.cls, targets, self.lambda_neg)
        return total_loss(l_seg, l_reg, l_cls, self.alpha)

    def fit(self, X, y=None):
        """Train end to end with Adam; per-epoch mean losses land in ``history_``."""
        samples = check_samples(X)
        self._seed_everything()
        n_cat = self.n_categories
        if n_cat is None:
            n_cat = 1 + max((o.category_id for s in samples for o in s.objects), default=0)
        names = {}
        for s in samples:
            for o in s.objects:
                names.setdefault(o.category_id, o.category_name)
        self.categories_ = {i: names.get(i, f"category_{i}") for i in range(n_cat)}
        self.net_ = SemanticGraspNet(self._net_config(n_cat))
        self.net_.train()
        optimizer = torch.optim.Adam(self.net_.parameters(), lr=self.learning_rate)
        rng = np.random.default_rng(self.seed)
        grid = augmentation_grid()
        cache = None if self.augment else [self._prepare(s) for s in samples]

        self.history_ = []
        start = time.perf_counter()
        for epoch in range(self.epochs):
            lr = self.learning_rate_at(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = rng.permutation(len(samples))
            sums = {"seg": 0.0, "reg": 0.0, "cls": 0.0, "grasp": 0.0, "total": 0.0}
            optimizer.zero_grad()
            for step, idx in enumerate(order, start=1):
                if cache is not None:
                    item = cache[idx]
                else:
                    crop, rot = grid[rng.integers(len(grid))]
                    s = samples[idx]
                    item = self._prepare(augment(s, crop, rot) if min(s.height, s.width) >= 480 else s)
                report = self._step_loss(item)
                (report.total / self.batch_size).backward()
                if step % self.batch_size == 0 or step == len(order):
                    optimizer.step()
                    optimizer.zero_grad()
                for key in sums:
                    sums[key] += float(getattr(report, key).detach())
            row = {"epoch": epoch + 1, "lr": lr}
            row.update({k: v / len(order) for k, v in sums.items()})
            self.history_.append(row)
            if self.verbose:
                log.info("epoch %d/%d total %.4f seg %.4f reg %.4f cls %.4f", epoch + 1, self.epochs, row["total"], row["seg"], row["reg"], row["cls"])
        self.fit_seconds_ = time.perf_counter() - start
        self.net_.eval()
        return self

    # -- inference ---------------------------------------------------------

    def _as_input(self, item):
        if isinstance(item, SceneSample):
            return prepare_sample(item, self.input_mode)
        image = check_image(item if min(np.asarray(item).shape[:2]) == 480 else center_crop(np.asarray(item)))
        return image

    def predict(self, X) -> list[list[Detection]]:
        check_is_fitted(self, "net_")
        out = []
        for item in X:
            prepared = self._as_input(item)
            if isinstance(prepared, SceneSample):
                gt_masks = None
                if self.inference_masks == "ground_truth":
                    gt_masks = [(o.category_id, m) for o, m in zip(prepared.objects, prepared.object_masks())]
                image = prepared.image
            else:
                gt_masks, image = None, prepared
            out.append(
                predict_scene(
                    image,
                    self.net_,
                    use_gt_masks=gt_masks,
                    use_feature_filtering=self.use_feature_filtering,
                    min_area=self.min_area,
                )
            )
        return out

    def predict_labels(self, X) -> list[np.ndarray]:
        """Full-resolution segmentation label maps (0 = background)."""
        check_is_fitted(self, "net_")
        out = []
        with torch.no_grad():
            for item in X:
                prepared = self._as_input(item)
                image = prepared.image if isinstance(prepared, SceneSample) else prepared
                x = image_to_tensor(image)
                logits = self.net_.segment(self.net_.features(x))
                out.append(seg_labels(logits, tuple(x.shape[-2:]))[0])
        return out

    def pixel_accuracy(self, X) -> float:
        samples = [prepare_sample(s, self.input_mode) for s in check_samples(X)]
        preds = self.predict_labels(samples)
        hits = sum(int((p == s.label_map()).sum()) for p, s in zip(preds, samples))
        total = sum(s.height * s.width for s in samples)
        return hits / total

    def evaluate(self, X, iou_min: float = 0.25, angle_max: float = 30.0) -> EvalResult:
        samples = [prepare_sample(s, self.input_mode) for s in check_samples(X)]
        return evaluate(self.predict(samples), samples, iou_min, angle_max)

    def score(self, X, y=None) -> float:
        """Rectangle-metric accuracy over all annotated objects."""
        return self.evaluate(X).accuracy

    # -- persistence -------------------------------------------------------

    def save(self, path) -> Path:
        check_is_fitted(self, "net_")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        params = self.get_params()
        params["channels"] = list(params["channels"])
        meta = {
            "version": CHECKPOINT_VERSION,
            "params": params,
            "net": self.net_.config.to_dict(),
            "categories": {str(k): v for k, v in self.categories_.items()},
            "input_mode": self.input_mode,
        }
        arrays = {f"w:{k}": v.detach().cpu().numpy() for k, v in self.net_.state_dict().items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
        return path

    @classmethod
    def load(cls, path) -> "SemanticGraspDetector":
        path = Path(path)
        try:
            with np.load(path, allow_pickle=False) as archive:
                meta = json.loads(str(archive["__meta__"]))
                weights = {k[2:]: torch.from_numpy(archive[k].copy()) for k in archive.files if k.startswith("w:")}
        except (OSError, KeyError, ValueError) as exc:
            raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        params = dict(meta["params"])
        params["channels"] = tuple(params["channels"])
        est = cls(**params)
        net_cfg = dict(meta["net"])
        net_cfg["channels"] = tuple(net_cfg["channels"])
        est.net_ = SemanticGraspNet(NetConfig(**net_cfg))
        est.net_.load_state_dict(weights)
        est.net_.eval()
        est.categories_ = {int(k): v for k, v in meta["categories"].items()}
        return est

    def check_compatible(self, cfg: RunConfig):
        """Raise CheckpointError naming the first architecture field that differs from ``cfg``."""
        check_is_fitted(self, "net_")
        mine = {
            "channels": list(self.net_.config.channels),
            "grasp_feature": self.net_.config.grasp_feature,
            "use_feature_fusion": self.net_.config.use_feature_fusion,
            "input_mode": self.input_mode,
        }
        theirs = {
            "channels": list(cfg.channels),
            "grasp_feature": cfg.grasp_feature,
            "use_feature_fusion": cfg.use_feature_fusion,
            "input_mode": cfg.input_mode,
        }
        for key in mine:
            if mine[key] != theirs[key]:
                raise CheckpointError(f"checkpoint/config mismatch in {key}: checkpoint has {mine[key]!r}, config has {theirs[key]!r}")
