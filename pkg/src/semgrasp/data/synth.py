"""Deterministic synthetic tabletop scenes with exact masks and grasps."""
from __future__ import annotations

import math

import numpy as np
from shapely.geometry import Polygon

from ..geometry import GraspRect
from .raster import rasterize_mask
from .scene import ObjectAnnotation, SceneSample

CATEGORIES = {0: "bar", 1: "ellipse", 2: "capsule"}

# (length range, thickness range, base RGB)
_SHAPES = {
    0: ((90.0, 150.0), (22.0, 36.0), (200, 60, 50)),
    1: ((80.0, 140.0), (32.0, 50.0), (60, 170, 70)),
    2: ((100.0, 160.0), (18.0, 30.0), (50, 80, 200)),
}

MAX_TRIES = 200
MIN_GAP = 8.0


def _outline(category: int, length: float, thickness: float) -> np.ndarray:
    """Shape outline centred at the origin with its major axis along +x."""
    a, b = length / 2.0, thickness / 2.0
    if category == 0:
        return np.array([[-a, -b], [a, -b], [a, b], [-a, b]])
    if category == 1:
        t = np.linspace(0.0, 2 * np.pi, 48, endpoint=False)
        return np.stack([a * np.cos(t), b * np.sin(t)], axis=1)
    # stadium: two half-discs joined by straight sides
    r = b
    t = np.linspace(-np.pi / 2, np.pi / 2, 13)
    right = np.stack([(a - r) + r * np.cos(t), r * np.sin(t)], axis=1)
    left = np.stack([-(a - r) - r * np.cos(t), -r * np.sin(t)], axis=1)
    return np.concatenate([right, left])


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    base = rng.uniform(115, 150)
    field = np.full((size, size), base)
    for _ in range(3):
        fx, fy = rng.uniform(0.01, 0.06, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += rng.uniform(4, 10) * np.sin(fx * xx + fy * yy + phase)
    tint = rng.uniform(-8, 8, size=3)
    img = field[..., None] + tint + rng.normal(0.0, 4.0, size=(size, size, 3))
    return img


def _draw_clutter(rng: np.random.Generator, img: np.ndarray, count: int):
    size = img.shape[0]
    for _ in range(count):
        color = rng.uniform(60, 190) + rng.uniform(-25, 25, size=3)
        cx, cy = rng.uniform(0, size, size=2)
        if rng.random() < 0.5:
            # thin stroke
            length, width = rng.uniform(20, 70), rng.uniform(2, 5)
        else:
            length, width = rng.uniform(8, 22), rng.uniform(8, 22)
        ang = rng.uniform(0, np.pi)
        c, s = math.cos(ang), math.sin(ang)
        local = np.array([[-length, -width], [length, -width], [length, width], [-length, width]]) / 2.0
        poly = local @ np.array([[c, -s], [s, c]]).T + [cx, cy]
        img[rasterize_mask(poly, size, size) > 0] = color


def synth_scene(seed: int, n_objects: int, clutter: bool = False, size: int = 480) -> SceneSample:
    """Render ``n_objects`` non-overlapping elongated shapes on a textured background.

    Each object carries its exact polygon mask and one grasp across its minor
    axis at the centroid (``w = 0.6 * length``, ``h = 1.5 * thickness``).
    A synthetic depth map (table plane plus raised objects) is attached.
    """
    if not 1 <= n_objects <= 5:
        raise ValueError(f"n_objects must lie in [1, 5], got {n_objects}")
    rng = np.random.default_rng(seed)
    img = _background(rng, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    depth = 1000.0 + 0.05 * xx + 0.08 * yy
    if clutter:
        _draw_clutter(rng, img, int(rng.integers(6, 13)))

    placed: list[Polygon] = []
    objects = []
    for _ in range(n_objects):
        category = int(rng.integers(0, len(CATEGORIES)))
        (l_lo, l_hi), (t_lo, t_hi), color = _SHAPES[category]
        length, thickness = rng.uniform(l_lo, l_hi), rng.uniform(t_lo, t_hi)
        outline = _outline(category, length, thickness)
        for _attempt in range(MAX_TRIES):
            phi = rng.uniform(-90.0, 90.0)
            margin = length / 2.0 + 4.0
            cx, cy = rng.uniform(margin, size - 1 - margin, size=2)
            t = math.radians(phi)
            rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
            poly = outline @ rot.T + [cx, cy]
            shape = Polygon(poly)
            if all(shape.distance(other) > MIN_GAP for other in placed):
                break
        else:
            raise RuntimeError(f"could not place object {len(placed) + 1} of {n_objects} after {MAX_TRIES} tries (seed {seed})")
        placed.append(shape)
        bitmap = rasterize_mask(poly, size, size) > 0
        shade = np.asarray(color, dtype=np.float64) + rng.uniform(-20, 20, size=3)
        img[bitmap] = shade + rng.normal(0.0, 3.0, size=(int(bitmap.sum()), 3))
        depth[bitmap] -= rng.uniform(30.0, 60.0)
        grasp = GraspRect(x=cx, y=cy, theta=phi + 90.0, w=0.6 * length, h=1.5 * thickness)
        objects.append(ObjectAnnotation(category, CATEGORIES[category], poly, [grasp]))

    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return SceneSample(image=image, objects=objects, source_id=f"synth-{seed}", channels="rgb", depth=np.rint(depth))
