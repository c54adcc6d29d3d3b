"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np

from .data.augment import CROP_SIZE, augment, to_rgd
from .data.scene import SceneSample


def check_image(image, multiple: int = 32) -> np.ndarray:
    """Return ``image`` as an (H, W, 3) uint8 array with H, W divisible by ``multiple``."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating) and arr.size and arr.min() >= 0.0 and arr.max() <= 1.0:
            arr = np.rint(arr * 255.0).astype(np.uint8)
        else:
            raise ValueError(f"expected uint8 pixels or floats in [0, 1], got {arr.dtype}")
    h, w = arr.shape[:2]
    if h % multiple or w % multiple:
        raise ValueError(f"image size {h}x{w} is not divisible by {multiple}")
    return arr


def center_crop(image: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {w}x{h} is smaller than {size}x{size}")
    y0, x0 = (h - size) // 2, (w - size) // 2
    return image[y0 : y0 + size, x0 : x0 + size]


def check_samples(X) -> list[SceneSample]:
    samples = list(X)
    if not samples:
        raise ValueError("no samples given")
    for k, s in enumerate(samples):
        if not isinstance(s, SceneSample):
            raise TypeError(f"sample {k} is a {type(s).__name__}, expected SceneSample")
    return samples


def prepare_sample(sample: SceneSample, input_mode: str, size: int = CROP_SIZE) -> SceneSample:
    """Center-crop to ``size`` when needed and switch to the requested channels."""
    if sample.height != size or sample.width != size:
        sample = augment(sample, "center", 0, size)
    if input_mode == "rgd":
        sample = to_rgd(sample)
    elif sample.channels != "rgb":
        raise ValueError(f"sample {sample.source_id!r} is {sample.channels}, model expects rgb")
    return sample
