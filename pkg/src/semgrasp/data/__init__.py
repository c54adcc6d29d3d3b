from .augment import CROPS, ROTATIONS, augment, augmentation_grid, build_rgd, to_rgd
from .cornell import CornellParseError, CornellReport, parse_cornell, read_positive_rects
from .raster import point_in_polygon, rasterize_mask
from .scene import (
    DatasetManifest,
    ObjectAnnotation,
    SceneSample,
    SchemaError,
    load_scene_json,
    save_scene_json,
)
from .synth import CATEGORIES as SYNTH_CATEGORIES
from .synth import synth_scene

__all__ = [
    "CROPS",
    "ROTATIONS",
    "augment",
    "augmentation_grid",
    "build_rgd",
    "to_rgd",
    "CornellParseError",
    "CornellReport",
    "parse_cornell",
    "read_positive_rects",
    "point_in_polygon",
    "rasterize_mask",
    "DatasetManifest",
    "ObjectAnnotation",
    "SceneSample",
    "SchemaError",
    "load_scene_json",
    "save_scene_json",
    "SYNTH_CATEGORIES",
    "synth_scene",
]
