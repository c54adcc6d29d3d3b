"""Independent reference computations used only by the tests."""
import numpy as np

from semgrasp.geometry import GraspRect, rect_to_polygon


def _inside_convex(poly, px, py):
    """Half-plane test of points against a positively oriented convex polygon."""
    inside = np.ones(np.broadcast(px, py).shape, dtype=bool)
    n = len(poly)
    for k in range(n):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % n]
        inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
    return inside


def bbox(*rects: GraspRect):
    pts = np.concatenate([rect_to_polygon(r) for r in rects])
    return pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max()


def raster_iou_bruteforce(a: GraspRect, b: GraspRect, n: int = 1024) -> float:
    """IoU by testing every one of n x n sample points over the joint bounding box."""
    x0, x1, y0, y1 = bbox(a, b)
    xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    ys = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    px, py = np.meshgrid(xs, ys)
    ia = _inside_convex(rect_to_polygon(a), px, py)
    ib = _inside_convex(rect_to_polygon(b), px, py)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def _row_intervals(poly, ys):
    """For each sample row y, the [lo, hi] x-interval covered by a convex polygon."""
    lo = np.full(len(ys), np.inf)
    hi = np.full(len(ys), -np.inf)
    n = len(poly)
    for k in range(n):
        (ax, ay), (bx, by) = poly[k], poly[(k + 1) % n]
        if ay == by:
            continue
        t = (ys - ay) / (by - ay)
        ok = (t >= 0) & (t <= 1)
        x = ax + t * (bx - ax)
        lo = np.where(ok, np.minimum(lo, x), lo)
        hi = np.where(ok, np.maximum(hi, x), hi)
    return lo, hi


def _count(xs, lo, hi):
    return np.clip(np.searchsorted(xs, hi, side="right") - np.searchsorted(xs, lo, side="left"), 0, None)


def raster_iou(a: GraspRect, b: GraspRect, n: int = 1024) -> float:
    """Same n x n point sampling as raster_iou_bruteforce, counted row by row."""
    x0, x1, y0, y1 = bbox(a, b)
    xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    ys = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    la, ha = _row_intervals(rect_to_polygon(a), ys)
    lb, hb = _row_intervals(rect_to_polygon(b), ys)
    na = _count(xs, la, ha)
    nb = _count(xs, lb, hb)
    ni = _count(xs, np.maximum(la, lb), np.minimum(ha, hb))
    union = int(na.sum() + nb.sum() - ni.sum())
    return int(ni.sum()) / union if union else 0.0


def random_rect(rng, frame: float = 480.0) -> GraspRect:
    return GraspRect(
        x=rng.uniform(0, frame),
        y=rng.uniform(0, frame),
        theta=rng.uniform(-90, 90),
        w=rng.uniform(5, 150),
        h=rng.uniform(5, 150),
    )


def random_pair(rng, frame: float = 480.0):
    """Second rect centered near the first so most pairs overlap."""
    a = random_rect(rng, frame)
    b = GraspRect(
        x=float(np.clip(a.x + rng.normal(0, 30), 0, frame)),
        y=float(np.clip(a.y + rng.normal(0, 30), 0, frame)),
        theta=rng.uniform(-90, 90),
        w=rng.uniform(5, 150),
        h=rng.uniform(5, 150),
    )
    return a, b


def brute_force_mask(polygon, height, width):
    """Pixel-center point-in-polygon via matplotlib's path test."""
    from matplotlib.path import Path

    yy, xx = np.mgrid[0:height, 0:width]
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    return Path(np.asarray(polygon)).contains_points(pts).reshape(height, width)
