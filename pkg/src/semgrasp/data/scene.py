"""Scene samples, per-object annotations and the scene JSON format."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..geometry import GraspRect
from .raster import point_in_polygon, rasterize_mask


class SchemaError(ValueError):
    """Scene or manifest JSON does not follow the expected layout."""


@dataclass
class ObjectAnnotation:
    category_id: int
    category_name: str
    mask: np.ndarray  # (k, 2) polygon, pixel coordinates
    grasps: list[GraspRect]
    mask_approximate: bool = False

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=float).reshape(-1, 2)

    def bitmap(self, height: int, width: int) -> np.ndarray:
        return rasterize_mask(self.mask, height, width)

    def contains(self, x: float, y: float) -> bool:
        return point_in_polygon(self.mask, x, y)


@dataclass
class SceneSample:
    image: np.ndarray  # (H, W, 3) uint8, RGB or RGD
    objects: list[ObjectAnnotation]
    source_id: str = ""
    channels: str = "rgb"
    depth: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def label_map(self) -> np.ndarray:
        """Per-pixel labels: 0 background, ``category_id + 1`` for objects.

        Later objects overwrite earlier ones where masks overlap.
        """
        labels = np.zeros((self.height, self.width), dtype=np.int64)
        for obj in self.objects:
            labels[obj.bitmap(self.height, self.width) > 0] = obj.category_id + 1
        return labels

    def object_masks(self) -> list[np.ndarray]:
        return [obj.bitmap(self.height, self.width) for obj in self.objects]


@dataclass
class DatasetManifest:
    """Category table plus the scene files of each split."""

    root: Path
    categories: dict[int, str]
    splits: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        ids = sorted(self.categories)
        if ids != list(range(len(ids))):
            raise SchemaError(f"category ids must be dense in [0, N-1], got {ids}")
        seen: dict[str, str] = {}
        for split, records in self.splits.items():
            for rec in records:
                if rec in seen and seen[rec] != split:
                    raise SchemaError(f"sample {rec!r} appears in splits {seen[rec]!r} and {split!r}")
                seen[rec] = split

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def load(self, split: str = "train") -> list[SceneSample]:
        if split not in self.splits:
            raise KeyError(f"manifest has no split {split!r}; available: {sorted(self.splits)}")
        return [load_scene_json(self.root / rec) for rec in self.splits[split]]

    def to_json(self) -> dict:
        return {
            "categories": [{"id": i, "name": self.categories[i]} for i in sorted(self.categories)],
            "splits": {k: list(v) for k, v in self.splits.items()},
        }

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        try:
            doc = json.loads(path.read_text())
            cats = {int(c["id"]): str(c["name"]) for c in doc["categories"]}
            splits = {str(k): [str(r) for r in v] for k, v in doc["splits"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: malformed manifest ({exc})") from exc
        return cls(root=path.parent, categories=cats, splits=splits)


def _require(cond: bool, where: str, msg: str):
    if not cond:
        raise SchemaError(f"{where}: {msg}")


def _number(value, where: str) -> float:
    _require(
        isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value),
        where,
        f"expected a finite number, got {value!r}",
    )
    return float(value)


def _is_simple(poly: np.ndarray) -> bool:
    from shapely.geometry import LinearRing

    if len(poly) < 3:
        return True
    return LinearRing(poly).is_simple


def parse_scene_dict(doc: dict, where: str = "scene") -> dict:
    """Validate a decoded scene JSON document and return its objects.

    Image loading is left to the caller.
    """
    _require(isinstance(doc, dict), where, "top level must be an object")
    for key in ("image", "channels", "objects"):
        _require(key in doc, f"{where}.{key}", "missing required field")
    _require(isinstance(doc["image"], str), f"{where}.image", "expected a relative path string")
    _require(doc["channels"] in ("rgb", "rgd"), f"{where}.channels", f"expected 'rgb' or 'rgd', got {doc['channels']!r}")
    _require(isinstance(doc["objects"], list), f"{where}.objects", "expected a list")
    objects = []
    for i, o in enumerate(doc["objects"]):
        ow = f"{where}.objects[{i}]"
        _require(isinstance(o, dict), ow, "expected an object")
        for key in ("category_id", "category_name", "mask", "grasps"):
            _require(key in o, f"{ow}.{key}", "missing required field")
        cid = o["category_id"]
        _require(isinstance(cid, int) and not isinstance(cid, bool) and cid >= 0, f"{ow}.category_id", f"expected a non-negative integer, got {cid!r}")
        _require(isinstance(o["category_name"], str), f"{ow}.category_name", "expected a string")
        _require(isinstance(o["mask"], list), f"{ow}.mask", "expected a list of [x, y] points")
        pts = []
        for k, p in enumerate(o["mask"]):
            _require(isinstance(p, list) and len(p) == 2, f"{ow}.mask[{k}]", f"expected [x, y], got {p!r}")
            pts.append([_number(p[0], f"{ow}.mask[{k}][0]"), _number(p[1], f"{ow}.mask[{k}][1]")])
        poly = np.array(pts, dtype=float).reshape(-1, 2)
        _require(_is_simple(poly), f"{ow}.mask", "polygon self-intersects")
        _require(isinstance(o["grasps"], list) and len(o["grasps"]) >= 1, f"{ow}.grasps", "expected a non-empty list")
        grasps = []
        for k, g in enumerate(o["grasps"]):
            gw = f"{ow}.grasps[{k}]"
            _require(isinstance(g, dict), gw, "expected an object")
            vals = {}
            for key in ("x", "y", "theta", "w", "h"):
                _require(key in g, f"{gw}.{key}", "missing required field")
                vals[key] = _number(g[key], f"{gw}.{key}")
            for key in ("w", "h"):
                _require(vals[key] > 0, f"{gw}.{key}", f"must be > 0, got {vals[key]}")
            _require(-90.0 <= vals["theta"] < 90.0, f"{gw}.theta", f"must lie in [-90, 90), got {vals['theta']}")
            grasps.append(GraspRect(**vals))
        objects.append(
            ObjectAnnotation(
                category_id=cid,
                category_name=o["category_name"],
                mask=poly,
                grasps=grasps,
                mask_approximate=bool(o.get("mask_approximate", False)),
            )
        )
    return {"objects": objects}


def scene_to_dict(sample: SceneSample, image_name: str, depth_name: Optional[str] = None) -> dict:
    doc = {
        "image": image_name,
        "channels": sample.channels,
        "source_id": sample.source_id,
        "objects": [],
    }
    if depth_name is not None:
        doc["depth"] = depth_name
    for obj in sample.objects:
        o = {
            "category_id": int(obj.category_id),
            "category_name": obj.category_name,
            "mask": [[float(x), float(y)] for x, y in obj.mask],
            "grasps": [g.as_dict() for g in obj.grasps],
        }
        if obj.mask_approximate:
            o["mask_approximate"] = True
        doc["objects"].append(o)
    return doc


def save_scene_json(sample: SceneSample, path) -> Path:
    """Write ``sample`` as ``<stem>.json`` plus ``<stem>.png`` (and a 16-bit depth PNG)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image_name = path.with_suffix(".png").name
    Image.fromarray(np.ascontiguousarray(sample.image, dtype=np.uint8)).save(path.with_suffix(".png"))
    depth_name = None
    if sample.depth is not None:
        depth_name = path.stem + "_depth.png"
        depth16 = np.clip(np.rint(sample.depth), 0, 65535).astype(np.uint16)
        Image.fromarray(depth16).save(path.parent / depth_name)
    doc = scene_to_dict(sample, image_name, depth_name)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def load_scene_json(path) -> SceneSample:
    """Read a scene JSON file and the image it references (path relative to the file)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    parsed = parse_scene_dict(doc, where=os.fspath(path))
    image_path = path.parent / doc["image"]
    if not image_path.exists():
        raise SchemaError(f"{path}.image: file {image_path} not found")
    image = np.asarray(Image.open(image_path).convert("RGB"))
    depth = None
    if doc.get("depth"):
        depth = np.asarray(Image.open(path.parent / doc["depth"])).astype(np.float64)
    h, w = image.shape[:2]
    for i, obj in enumerate(parsed["objects"]):
        for k, g in enumerate(obj.grasps):
            _require(
                0.0 <= g.x <= w - 1 and 0.0 <= g.y <= h - 1,
                f"{path}.objects[{i}].grasps[{k}]",
                f"center ({g.x}, {g.y}) outside the {w}x{h} image",
            )
    return SceneSample(
        image=image,
        objects=parsed["objects"],
        source_id=str(doc.get("source_id", path.stem)),
        channels=doc["channels"],
        depth=depth,
    )
