"""Cornell grasping dataset ingestion.

Layout per image ``pcdNNNNr.png``: positive rectangles in ``pcdNNNNcpos.txt``
(four ``x y`` lines per rectangle) and, optionally, an object contour in
``pcdNNNNcontour.txt`` (one ``x y`` vertex per line).
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..geometry import GraspRect, quad_to_rect, rect_to_polygon
from .scene import ObjectAnnotation, SceneSample

log = logging.getLogger(__name__)

_IMAGE_RE = re.compile(r"^(pcd\d+)r\.png$")
CATEGORY_NAME = "object"


class CornellParseError(ValueError):
    pass


@dataclass
class CornellReport:
    n_images: int = 0
    n_grasps: int = 0
    nan_lines_skipped: int = 0
    missing_annotations: list[str] = field(default_factory=list)
    approximate_masks: list[str] = field(default_factory=list)


def _read_points(path: Path) -> list[tuple[int, float, float]]:
    """Return (line number, x, y); NaN coordinates are kept for the caller."""
    points = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CornellParseError(f"{path}:{lineno}: expected 'x y', got {line!r}")
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise CornellParseError(f"{path}:{lineno}: non-numeric vertex {line!r}") from None
        points.append((lineno, x, y))
    return points


def read_positive_rects(path, report: CornellReport | None = None) -> list[GraspRect]:
    """Parse a ``cpos`` file into grasp rectangles; groups with NaN are skipped."""
    path = Path(path)
    points = _read_points(path)
    if len(points) % 4:
        raise CornellParseError(f"{path}: {len(points)} vertex lines is not a multiple of 4")
    rects = []
    for k in range(0, len(points), 4):
        group = points[k : k + 4]
        bad = sum(1 for _, x, y in group if math.isnan(x) or math.isnan(y))
        if bad:
            if report is not None:
                report.nan_lines_skipped += bad
            continue
        quad = np.array([[x, y] for _, x, y in group])
        try:
            rects.append(quad_to_rect(quad))
        except ValueError as exc:
            raise CornellParseError(f"{path}:{group[0][0]}: {exc}") from None
    return rects


def _hull(points: np.ndarray) -> np.ndarray:
    from scipy.spatial import ConvexHull

    hull = ConvexHull(points)
    return points[hull.vertices]


def parse_cornell(directory, report: CornellReport | None = None) -> list[SceneSample]:
    """Load every annotated image under ``directory`` as a single-object scene."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    report = report if report is not None else CornellReport()
    samples = []
    for image_path in sorted(directory.iterdir()):
        m = _IMAGE_RE.match(image_path.name)
        if not m:
            continue
        stem = m.group(1)
        pos_path = directory / f"{stem}cpos.txt"
        if not pos_path.exists():
            report.missing_annotations.append(stem)
            log.warning("%s: no positive-rectangle file, skipped", stem)
            continue
        rects = read_positive_rects(pos_path, report)
        if not rects:
            report.missing_annotations.append(stem)
            log.warning("%s: no valid rectangles, skipped", stem)
            continue
        image = np.asarray(Image.open(image_path).convert("RGB"))
        contour_path = directory / f"{stem}contour.txt"
        if contour_path.exists():
            mask = np.array([[x, y] for _, x, y in _read_points(contour_path)])
            approximate = False
        else:
            corners = np.concatenate([rect_to_polygon(g) for g in rects])
            mask = _hull(corners)
            approximate = True
            report.approximate_masks.append(stem)
        samples.append(
            SceneSample(
                image=image,
                objects=[
                    ObjectAnnotation(
                        category_id=0,
                        category_name=CATEGORY_NAME,
                        mask=mask,
                        grasps=rects,
                        mask_approximate=approximate,
                    )
                ],
                source_id=stem,
            )
        )
        report.n_images += 1
        report.n_grasps += len(rects)
    if report.nan_lines_skipped:
        log.warning("skipped %d NaN vertex lines", report.nan_lines_skipped)
    return samples

