"""Rectangle-metric scoring, threshold sweeps and variability."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence

from .geometry import is_match

IOU_THRESHOLDS = (0.20, 0.25, 0.30, 0.35)
ANGLE_THRESHOLDS = (10.0, 20.0, 30.0)


@dataclass
class MatchRecord:
    sample: int
    object_index: int
    matched_gt: Optional[int]


@dataclass
class EvalResult:
    n_samples: int
    n_correct: int
    records: list[MatchRecord] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_samples if self.n_samples else 0.0

    def to_json(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "records": [
                {"sample": r.sample, "object_index": r.object_index, "matched_gt": r.matched_gt} for r in self.records
            ],
        }


def _candidates(dets, obj, k):
    indexed = [d for d in dets if d.object_index is not None]
    if indexed:
        return [d for d in indexed if d.object_index == k]
    return [d for d in dets if d.category_id == obj.category_id and obj.contains(d.grasp.x, d.grasp.y)]


def evaluate(detections: Sequence[Sequence], gts: Sequence, iou_min: float = 0.25, angle_max: float = 30.0) -> EvalResult:
    """Count ground-truth objects whose detection matches one of their grasps.

    Detections are tied to objects through ``object_index`` when set, else by
    category and by the detected center lying inside the object's mask.
    """
    if len(detections) != len(gts):
        raise ValueError(f"{len(detections)} detection lists for {len(gts)} samples")
    n = correct = 0
    records = []
    for s, (dets, sample) in enumerate(zip(detections, gts)):
        for k, obj in enumerate(sample.objects):
            n += 1
            hit = None
            for det in _candidates(dets, obj, k):
                for gi, gt in enumerate(obj.grasps):
                    if is_match(det.grasp, gt, iou_min, angle_max):
                        hit = gi
                        break
                if hit is not None:
                    break
            correct += hit is not None
            records.append(MatchRecord(s, k, hit))
    return EvalResult(n_samples=n, n_correct=correct, records=records)


def _decimal(x) -> Decimal:
    return Decimal(repr(float(x)))


def variability(accuracies: Sequence[float]) -> float:
    """Spread (max - min) of accuracies in percent, rounded half-up to 0.1."""
    if len(accuracies) == 0:
        raise ValueError("variability of an empty list")
    vals = [_decimal(a) for a in accuracies]
    spread = max(vals) - min(vals)
    return float(spread.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class SweepTable:
    rows: list[tuple[float, float, float]]  # (iou, angle, accuracy %)

    def accuracy(self, iou: float, angle: float) -> float:
        for i, a, acc in self.rows:
            if i == iou and a == angle:
                return acc
        raise KeyError((iou, angle))

    @property
    def ious(self) -> list[float]:
        return sorted({r[0] for r in self.rows})

    @property
    def angles(self) -> list[float]:
        return sorted({r[1] for r in self.rows})

    def iou_profile(self, angle: float = 30.0) -> list[float]:
        return [self.accuracy(i, angle) for i in self.ious]

    def angle_profile(self, iou: float = 0.25) -> list[float]:
        return [self.accuracy(iou, a) for a in self.angles]

    def iou_variability(self, angle: float = 30.0) -> float:
        return variability(self.iou_profile(angle))

    def angle_variability(self, iou: float = 0.25) -> float:
        return variability(self.angle_profile(iou))

    def check_monotone(self):
        """Accuracy never rises with the IoU threshold nor falls with the angle threshold."""
        for a in self.angles:
            prof = self.iou_profile(a)
            if any(x < y for x, y in zip(prof, prof[1:])):
                raise AssertionError(f"accuracy rises with IoU threshold at angle {a}: {prof}")
        for i in self.ious:
            prof = self.angle_profile(i)
            if any(x > y for x, y in zip(prof, prof[1:])):
                raise AssertionError(f"accuracy falls with angle threshold at IoU {i}: {prof}")

    def to_json(self) -> dict:
        return {
            "rows": [{"iou": i, "angle": a, "accuracy": acc} for i, a, acc in self.rows],
            "iou_variability": {str(a): self.iou_variability(a) for a in self.angles},
            "angle_variability": {str(i): self.angle_variability(i) for i in self.ious},
        }

    def to_text(self) -> str:
        lines = [f"{'iou':>6} {'angle':>6} {'accuracy':>9}"]
        for i, a, acc in self.rows:
            lines.append(f"{i:>6.2f} {a:>6.0f} {acc:>9.2f}")
        for a in self.angles:
            lines.append(f"variability over IoU at angle {a:.0f}: {self.iou_variability(a):.1f}")
        for i in self.ious:
            lines.append(f"variability over angle at IoU {i:.2f}: {self.angle_variability(i):.1f}")
        return "\n".join(lines)


def sweep(
    detections,
    gts,
    iou_list: Sequence[float] = IOU_THRESHOLDS,
    angle_list: Sequence[float] = ANGLE_THRESHOLDS,
) -> SweepTable:
    rows = []
    for iou in iou_list:
        for angle in angle_list:
            res = evaluate(detections, gts, iou, angle)
            rows.append((float(iou), float(angle), 100.0 * res.accuracy))
    table = SweepTable(rows)
    table.check_monotone()
    return table


def report_json(result: EvalResult, table: Optional[SweepTable] = None) -> str:
    doc = {"result": result.to_json()}
    if table is not None:
        doc["sweep"] = table.to_json()
    return json.dumps(doc, indent=2) + "\n"


def report_text(result: EvalResult, table: Optional[SweepTable] = None) -> str:
    lines = [f"objects: {result.n_samples}  correct: {result.n_correct}  accuracy: {100 * result.accuracy:.2f}%"]
    if table is not None:
        lines.append(table.to_text())
    return "\n".join(lines) + "\n"
