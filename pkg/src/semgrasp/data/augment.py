"""Crop/rotate augmentation and RGD channel composition."""
from __future__ import annotations

import itertools
import math

import cv2
import numpy as np

from ..geometry import GraspRect
from .scene import ObjectAnnotation, SceneSample

CROP_SIZE = 480
CROPS = ("center", "left", "right")
ROTATIONS = tuple(range(0, 360, 20))


def augmentation_grid() -> list[tuple[str, int]]:
    """All 3 x 18 (crop, rotation) pairs, in a fixed order."""
    return list(itertools.product(CROPS, ROTATIONS))


def _rotation(degrees: float, cx: float, cy: float) -> np.ndarray:
    # exact entries for quarter turns keep integer pixel maps exact
    if degrees % 90 == 0:
        k = int(degrees // 90) % 4
        c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k]
    else:
        t = math.radians(degrees)
        c, s = math.cos(t), math.sin(t)
    # same convention as cv2.getRotationMatrix2D: positive = counter-clockwise on screen
    return np.array([[c, s, (1 - c) * cx - s * cy], [-s, c, s * cx + (1 - c) * cy]], dtype=float)


def crop_offset(height: int, width: int, crop: str, size: int = CROP_SIZE) -> tuple[int, int]:
    if crop not in CROPS:
        raise ValueError(f"crop must be one of {CROPS}, got {crop!r}")
    if height < size or width < size:
        raise ValueError(f"image {width}x{height} is smaller than the {size}x{size} crop")
    y0 = (height - size) // 2
    x0 = {"center": (width - size) // 2, "left": 0, "right": width - size}[crop]
    return x0, y0


def augment_matrix(height: int, width: int, crop: str, rotation: float, size: int = CROP_SIZE) -> np.ndarray:
    """2x3 affine map from source pixel coordinates to augmented ones."""
    x0, y0 = crop_offset(height, width, crop, size)
    c = (size - 1) / 2.0
    rot = _rotation(rotation, c, c)
    shift = np.array([[1.0, 0.0, -x0], [0.0, 1.0, -y0], [0.0, 0.0, 1.0]])
    return rot @ shift


def transform_grasp(g: GraspRect, matrix: np.ndarray) -> GraspRect:
    lin = matrix[:, :2]
    x, y = lin @ np.array([g.x, g.y]) + matrix[:, 2]
    t = math.radians(g.theta)
    dx, dy = lin @ np.array([math.cos(t), math.sin(t)])
    return GraspRect(x=x, y=y, theta=math.degrees(math.atan2(dy, dx)), w=g.w, h=g.h)


def augment(sample: SceneSample, crop: str = "center", rotation: float = 0, size: int = CROP_SIZE) -> SceneSample:
    """Crop to ``size`` x ``size`` then rotate about the crop center.

    Grasps whose centers leave the frame are dropped, then objects left
    without grasps.
    """
    h, w = sample.height, sample.width
    matrix = augment_matrix(h, w, crop, rotation, size)
    x0, y0 = crop_offset(h, w, crop, size)
    if rotation % 360 == 0:
        image = sample.image[y0 : y0 + size, x0 : x0 + size].copy()
        depth = None if sample.depth is None else sample.depth[y0 : y0 + size, x0 : x0 + size].copy()
    else:
        image = cv2.warpAffine(sample.image, matrix, (size, size), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)
        depth = None
        if sample.depth is not None:
            depth = cv2.warpAffine(
                np.asarray(sample.depth, dtype=np.float32), matrix, (size, size), flags=cv2.INTER_NEAREST, borderMode=cv2.BORDER_REFLECT_101
            ).astype(np.float64)

    objects = []
    for obj in sample.objects:
        grasps = []
        for g in obj.grasps:
            ng = transform_grasp(g, matrix)
            if 0.0 <= ng.x <= size - 1 and 0.0 <= ng.y <= size - 1:
                grasps.append(ng)
        if not grasps:
            continue
        mask = obj.mask @ matrix[:, :2].T + matrix[:, 2]
        objects.append(ObjectAnnotation(obj.category_id, obj.category_name, mask, grasps, obj.mask_approximate))
    return SceneSample(
        image=image,
        objects=objects,
        source_id=f"{sample.source_id}@{crop}/{int(rotation) if float(rotation).is_integer() else rotation}",
        channels=sample.channels,
        depth=depth,
    )


def build_rgd(rgb: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Replace the blue channel with per-image min-max normalized depth.

    A constant depth image yields an all-zero depth channel.
    """
    rgb = np.asarray(rgb)
    depth = np.asarray(depth, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb must be HxWx3, got {rgb.shape}")
    if depth.shape != rgb.shape[:2]:
        raise ValueError(f"depth {depth.shape} is not aligned with rgb {rgb.shape[:2]}")
    if not np.all(np.isfinite(depth)):
        raise ValueError("depth contains non-finite values")
    lo, hi = depth.min(), depth.max()
    if hi > lo:
        d = np.rint((depth - lo) / (hi - lo) * 255.0)
    else:
        d = np.zeros_like(depth)
    out = rgb.copy()
    out[..., 2] = d.astype(out.dtype)
    return out


def to_rgd(sample: SceneSample) -> SceneSample:
    if sample.channels == "rgd":
        return sample
    if sample.depth is None:
        raise ValueError(f"sample {sample.source_id!r} has no depth; cannot build RGD input")
    return SceneSample(
        image=build_rgd(sample.image, sample.depth),
        objects=sample.objects,
        source_id=sample.source_id,
        channels="rgd",
        depth=sample.depth,
    )
