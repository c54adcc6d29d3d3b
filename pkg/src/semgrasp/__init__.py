"""Semantic grasp detection: per-object oriented grasp rectangles from segmentation-filtered features."""

__version__ = "0.1.0"
