"""Oriented grasp rectangles: representation, angle classes and the rectangle metric.

Coordinates are image pixels with the origin at the top-left pixel center,
x growing along columns and y growing along rows.  Angles are in degrees and
live in ``[-90, 90)``; a grasp and its 180 degree rotation are the same grasp.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

N_ANGLE_CLASSES = 19
ANGLE_BIN = 10.0

# Index of the quad edge that carries the plate size ``w``; the opposite choice
# (plate along v2->v3) is obtained by setting this to 1.
PLATE_EDGE = 0


def wrap_angle(theta: float) -> float:
    """Wrap an angle in degrees onto ``[-90, 90)``."""
    wrapped = math.fmod(theta + 90.0, 180.0)
    if wrapped < 0.0:
        wrapped += 180.0
    wrapped -= 90.0
    # fmod can land exactly on +90 after float rounding
    if wrapped >= 90.0:
        wrapped -= 180.0
    return wrapped


@dataclass(frozen=True)
class GraspRect:
    """A 5-D grasp ``{x, y, theta, w, h}``.

    ``w`` is the plate size and lies along ``theta``; ``h`` is the gripper
    opening width.  ``theta`` is wrapped onto ``[-90, 90)`` on construction.
    """

    x: float
    y: float
    theta: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "theta", "w", "h"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"GraspRect.{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"GraspRect needs w > 0 and h > 0, got w={self.w}, h={self.h}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x, self.y)

    def as_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "theta": self.theta, "w": self.w, "h": self.h}

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.w, self.h])


def encode_angle(theta: float) -> int:
    """Map an angle in ``[-90, 90)`` to its class in ``[1, 19]``.

    Rounding is half away from zero.
    """
    theta = float(theta)
    if not (-90.0 <= theta < 90.0):
        raise ValueError(f"theta must lie in [-90, 90), got {theta}")
    scaled = (theta + 90.0) / ANGLE_BIN
    return int(math.floor(scaled + 0.5)) + 1


def decode_angle(c: int) -> float:
    """Bin-center angle of class ``c``; class 19 decodes to +90 (== -90)."""
    if isinstance(c, bool) or int(c) != c or not (1 <= c <= N_ANGLE_CLASSES):
        raise ValueError(f"angle class must be an integer in [1, {N_ANGLE_CLASSES}], got {c!r}")
    return (int(c) - 1) * ANGLE_BIN - 90.0


def rect_to_polygon(g: GraspRect) -> np.ndarray:
    """Corners of ``g`` as a (4, 2) array of (x, y).

    Order starts at local (-w/2, -h/2) and runs (+w, 0), (+w, +h), (0, +h),
    which is counter-clockwise in a y-up frame (positive shoelace area).
    """
    t = math.radians(g.theta)
    c, s = math.cos(t), math.sin(t)
    hw, hh = g.w / 2.0, g.h / 2.0
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([g.x, g.y])


def quad_to_rect(q: Sequence[Sequence[float]], tol: float = 1e-3) -> GraspRect:
    """Recover a GraspRect from four consecutive rectangle vertices."""
    q = np.asarray(q, dtype=float)
    if q.shape != (4, 2):
        raise ValueError(f"quad must have shape (4, 2), got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("quad contains non-finite coordinates")
    edges = np.roll(q, -1, axis=0) - q
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    if abs(polygon_area(q)) <= 1e-12 or np.any(lengths <= 1e-12):
        raise ValueError("degenerate quad: zero area")
    scale = max(1.0, float(lengths.max()))
    if abs(lengths[0] - lengths[2]) > tol * scale or abs(lengths[1] - lengths[3]) > tol * scale:
        raise ValueError(f"quad is not a rectangle: edge lengths {lengths.tolist()}")
    plate = edges[PLATE_EDGE]
    theta = math.degrees(math.atan2(plate[1], plate[0]))
    center = q.mean(axis=0)
    return GraspRect(
        x=center[0],
        y=center[1],
        theta=theta,
        w=lengths[PLATE_EDGE],
        h=lengths[PLATE_EDGE + 1],
    )


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for the vertex order of rect_to_polygon)."""
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex ``clipper``.

    Both polygons must have positive orientation.  Returns the (k, 2) vertex
    array of the intersection, possibly empty.
    """
    output = [tuple(p) for p in np.asarray(subject, dtype=float)]
    clipper = np.asarray(clipper, dtype=float)
    n = len(clipper)
    for k in range(n):
        if not output:
            break
        ax, ay = clipper[k]
        bx, by = clipper[(k + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inputs, output = output, []
        prev = inputs[-1]
        s_prev = side(prev)
        for cur in inputs:
            s_cur = side(cur)
            if s_cur >= 0.0:
                if s_prev < 0.0:
                    output.append(_cross_point(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0.0:
                output.append(_cross_point(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.array(output, dtype=float).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_area(a: GraspRect, b: GraspRect) -> float:
    # cheap reject on bounding circles
    ra = 0.5 * math.hypot(a.w, a.h)
    rb = 0.5 * math.hypot(b.w, b.h)
    if math.hypot(a.x - b.x, a.y - b.y) > ra + rb:
        return 0.0
    # clip in a frame centred between the two rects to limit cancellation
    origin = np.array([(a.x + b.x) / 2.0, (a.y + b.y) / 2.0])
    pa, pb = rect_to_polygon(a) - origin, rect_to_polygon(b) - origin
    return max(0.0, polygon_area(clip_convex(pa, pb)))


def jaccard(a: GraspRect, b: GraspRect) -> float:
    """Intersection over union of two oriented rectangles."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def angle_distance(t1: float, t2: float) -> float:
    """Smallest difference between two gripper angles, in ``[0, 90]``."""
    d = abs(float(t1) - float(t2)) % 180.0
    return min(d, 180.0 - d)


def is_match(
    pred: GraspRect,
    gt: GraspRect,
    iou_min: float = 0.25,
    angle_max: float = 30.0,
) -> bool:
    """Rectangle metric: angle within ``angle_max`` and Jaccard above ``iou_min``."""
    if not (0.0 < iou_min <= 1.0):
        raise ValueError(f"iou_min must lie in (0, 1], got {iou_min}")
    if not (0.0 < angle_max <= 90.0):
        raise ValueError(f"angle_max must lie in (0, 90], got {angle_max}")
    if angle_distance(pred.theta, gt.theta) > angle_max:
        return False
    if pred == gt:
        return True
    return jaccard(pred, gt) > iou_min
