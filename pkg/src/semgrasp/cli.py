"""Command line entry point: ``semgrasp {convert,synth,train,eval,predict}``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data import (
    CornellParseError,
    CornellReport,
    DatasetManifest,
    SchemaError,
    build_rgd,
    parse_cornell,
    save_scene_json,
    synth_scene,
)
from .data.augment import CROP_SIZE
from .data.synth import CATEGORIES
from .estimator import CheckpointError, SemanticGraspDetector
from .evaluation import evaluate, report_json, report_text, sweep
from .geometry import rect_to_polygon
from .losses import NonFiniteLossError
from .validation import prepare_sample

log = logging.getLogger("semgrasp")

PLATE_COLOR = (255, 64, 64)
OPENING_COLOR = (64, 160, 255)


class UsageError(Exception):
    pass


# -- helpers -----------------------------------------------------------------------


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def dataset_hash(manifest_file: Path) -> str:
    """Tree-style digest over the manifest and every scene, image and depth file it names."""
    manifest_file = Path(manifest_file)
    root = manifest_file.parent
    entries = {manifest_file.name: git_blob_hash(manifest_file.read_bytes())}
    doc = json.loads(manifest_file.read_text())
    for records in doc.get("splits", {}).values():
        for rec in records:
            scene = root / rec
            entries[rec] = git_blob_hash(scene.read_bytes())
            scene_doc = json.loads(scene.read_text())
            for key in ("image", "depth"):
                if scene_doc.get(key):
                    name = str(Path(rec).parent / scene_doc[key])
                    entries[name] = git_blob_hash((scene.parent / scene_doc[key]).read_bytes())
    listing = "".join(f"{h} {name}\n" for name, h in sorted(entries.items()))
    return hashlib.sha1(listing.encode()).hexdigest()


def _split_ids(ids: list[str], test_fraction: float, seed: int) -> dict[str, list[str]]:
    if not 0 <= test_fraction < 1:
        raise UsageError(f"--test-fraction must lie in [0, 1), got {test_fraction}")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test = sorted(ids[i] for i in order[:n_test])
    train = sorted(ids[i] for i in order[n_test:])
    splits = {"train": train}
    if test:
        splits["test"] = test
    return splits


def _manifest_path(path: str) -> Path:
    p = Path(path)
    return p / "manifest.json" if p.is_dir() else p


def _load_split(path: str, split: str):
    if not path:
        raise UsageError("the config does not name a dataset")
    manifest = DatasetManifest.read(_manifest_path(path))
    try:
        return manifest, manifest.load(split)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "deterministic", None) is not None:
        changes["deterministic"] = args.deterministic
    return cfg.replace(**changes) if changes else cfg


def _write_run_manifest(out: Path, cfg: RunConfig, manifest_file: Path, extra: dict) -> Path:
    doc = {
        "semgrasp_version": __version__,
        "python": platform.python_version(),
        "seed": cfg.seed,
        "deterministic": cfg.deterministic,
        "dataset_manifest": str(manifest_file),
        "dataset_hash": dataset_hash(manifest_file),
        "config": cfg.to_dict(),
    }
    doc.update(extra)
    path = out / "run_manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# -- verbs ---------------------------------------------------------------------------


def cmd_convert(args) -> int:
    src, out = Path(args.cornell_dir), Path(args.out)
    if not src.is_dir():
        raise UsageError(f"{src} is not a directory")
    report = CornellReport()
    samples = parse_cornell(src, report)
    if not samples:
        raise CornellParseError(f"{src}: no Cornell images (pcdNNNNr.png with pcdNNNNcpos.txt) found")
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        save_scene_json(s, out / f"{s.source_id}.json")
        ids.append(f"{s.source_id}.json")
    manifest = DatasetManifest(out, {0: "object"}, _split_ids(ids, args.test_fraction, args.seed))
    manifest.save()
    print(
        f"images: {report.n_images}  grasps: {report.n_grasps}  skipped NaN lines: {report.nan_lines_skipped}  "
        f"missing annotations: {len(report.missing_annotations)}  approximate masks: {len(report.approximate_masks)}"
    )
    return 0


def _object_counts(spec: str) -> tuple[int, int]:
    lo, _, hi = spec.partition("-")
    try:
        lo_i, hi_i = int(lo), int(hi or lo)
    except ValueError as exc:
        raise UsageError(f"--objects must be N or LO-HI, got {spec!r}") from exc
    if not 1 <= lo_i <= hi_i <= 5:
        raise UsageError(f"--objects must lie in [1, 5], got {spec!r}")
    return lo_i, hi_i


def cmd_synth(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    lo, hi = _object_counts(args.objects)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    ids = []
    for k in range(args.count):
        scene_seed = int(rng.integers(2**31))
        n = int(rng.integers(lo, hi + 1))
        s = synth_scene(scene_seed, n, clutter=args.clutter)
        name = f"synth_{k:04d}.json"
        save_scene_json(s, out / name)
        ids.append(name)
    path = DatasetManifest(out, dict(CATEGORIES), _split_ids(ids, args.test_fraction, args.seed)).save()
    print(f"scenes: {args.count}  manifest: {path}  hash: {dataset_hash(path)}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest, samples = _load_split(cfg.train_data, cfg.train_split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est = SemanticGraspDetector.from_config(cfg, n_categories=manifest.n_categories, verbose=args.verbose)
    est.fit(samples)
    # keep the manifest's names even for categories absent from this split
    est.categories_ = dict(manifest.categories)
    ckpt = est.save(Path(args.checkpoint) if args.checkpoint else out / "checkpoint.npz")
    with open(out / "loss.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "lr", "seg", "reg", "cls", "grasp", "total"])
        writer.writeheader()
        writer.writerows(est.history_)
    _write_run_manifest(
        out,
        cfg,
        _manifest_path(cfg.train_data),
        {"command": "train", "checkpoint": str(ckpt), "fit_seconds": est.fit_seconds_, "n_samples": len(samples)},
    )
    first, last = est.history_[0]["total"], est.history_[-1]["total"]
    print(f"trained {cfg.epochs} epochs on {len(samples)} scenes in {est.fit_seconds_:.1f}s; total loss {first:.4f} -> {last:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    est = SemanticGraspDetector.load(args.checkpoint)
    est.check_compatible(cfg)
    est.set_params(inference_masks=cfg.inference_masks, use_feature_filtering=cfg.use_feature_filtering, min_area=cfg.min_area)
    data = cfg.test_data or cfg.train_data
    _, samples = _load_split(data, cfg.eval_split)
    prepared = [prepare_sample(s, est.input_mode) for s in samples]
    detections = est.predict(prepared)
    result = evaluate(detections, prepared)
    table = sweep(detections, prepared) if args.sweep else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(result, table))
    text = report_text(result, table)
    (out / "report.txt").write_text(text)
    _write_run_manifest(out, cfg, _manifest_path(data), {"command": "eval", "checkpoint": str(args.checkpoint)})
    sys.stdout.write(text)
    return 0


def _load_image(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise OSError(f"{path}: cannot read image ({exc})") from exc


def fit_to_frame(image: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """Scale so the short side is at least ``size``, then center-crop to size x size."""
    import cv2

    h, w = image.shape[:2]
    if min(h, w) < size:
        scale = size / min(h, w)
        image = cv2.resize(image, (max(size, round(w * scale)), max(size, round(h * scale))), interpolation=cv2.INTER_LINEAR)
        h, w = image.shape[:2]
    y0, x0 = (h - size) // 2, (w - size) // 2
    return np.ascontiguousarray(image[y0 : y0 + size, x0 : x0 + size])


def draw_overlay(image: np.ndarray, detections, categories: dict) -> np.ndarray:
    """Grasp rectangles with plate edges and opening edges in different colors."""
    import cv2

    canvas = np.ascontiguousarray(image.copy())
    for det in detections:
        corners = rect_to_polygon(det.grasp)
        pts = np.rint(corners).astype(np.int32)
        for k in range(4):
            color = PLATE_COLOR if k % 2 == 0 else OPENING_COLOR
            cv2.line(canvas, tuple(map(int, pts[k])), tuple(map(int, pts[(k + 1) % 4])), color, 2, cv2.LINE_AA)
        label = f"{categories.get(det.category_id, det.category_id)} {det.confidence:.2f}"
        org = (int(pts[:, 0].min()), max(12, int(pts[:, 1].min()) - 4))
        cv2.putText(canvas, label, org, cv2.FONT_HERSHEY_SIMPLEX, 0.45, (255, 255, 255), 1, cv2.LINE_AA)
    return canvas


def prediction_record(image_id: str, detections, categories: dict) -> dict:
    return {
        "image": image_id,
        "detections": [d.as_dict(categories.get(d.category_id)) for d in detections],
    }


def cmd_predict(args) -> int:
    if not args.checkpoint:
        raise UsageError("predict needs --checkpoint")
    path = Path(args.image)
    est = SemanticGraspDetector.load(args.checkpoint)
    image = fit_to_frame(_load_image(path))
    if est.input_mode == "rgd":
        if not args.depth:
            raise UsageError("this checkpoint expects RGD input; pass --depth")
        from PIL import Image

        with Image.open(args.depth) as im:
            depth = fit_to_frame(np.asarray(im).astype(np.float64)[..., None])[..., 0]
        image = build_rgd(image, depth)
    detections = est.predict([image])[0]
    record = prediction_record(path.stem, detections, est.categories_)
    text = json.dumps(record, indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{path.stem}.json").write_text(text)
    else:
        sys.stdout.write(text)
    if args.overlay:
        from PIL import Image

        target = Path(args.out) if args.out else path.parent
        overlay_path = target / f"{path.stem}_overlay.png"
        Image.fromarray(draw_overlay(image, detections, est.categories_)).save(overlay_path)
        log.info("overlay written to %s", overlay_path)
    return 0


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semgrasp", description="Semantic grasp detection toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a Cornell directory into scene JSON")
    p.add_argument("cornell_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="render a synthetic scene dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--objects", default="1-3", help="objects per scene, N or LO-HI within [1, 5]")
    p.add_argument("--clutter", action="store_true", help="add background distractors")
    p.add_argument("--test-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (("train", cmd_train, "train a model"), ("eval", cmd_eval, "score a checkpoint")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="flat TOML run config")
        p.add_argument("--checkpoint", help="checkpoint path (written by train, read by eval)")
        p.add_argument("--seed", type=int)
        p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--out", default="runs/latest")
        if name == "eval":
            p.add_argument("--sweep", action="store_true", help="add the IoU x angle threshold table")
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="detect grasps in one image")
    p.add_argument("image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--depth", help="depth PNG for RGD checkpoints")
    p.add_argument("--overlay", action="store_true", help="also write <stem>_overlay.png")
    p.add_argument("--out", help="directory for the JSON record (default: stdout)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"semgrasp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, SchemaError, CornellParseError, NonFiniteLossError, OSError, ValueError, RuntimeError) as exc:
        print(f"semgrasp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
