"""PASCAL VOC 2012 style detection scoring: matching, PR curves, AP and mAP."""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from dataclasses import dataclass, field

from signsynth.annotations import Detection, GroundTruthIndex, dump_json
from signsynth.boxes import iou
from signsynth.errors import NoGroundTruthError

DEFAULT_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class RankedDetection:
    index: int  # position in the input detection list
    confidence: float
    is_tp: bool


@dataclass
class MatchResult:
    ranked: dict[int, list[RankedDetection]] = field(default_factory=dict)
    num_gt: dict[int, int] = field(default_factory=dict)
    iou_threshold: float = DEFAULT_IOU_THRESHOLD

    def classes(self) -> list[int]:
        return sorted(set(self.ranked) | set(self.num_gt))


@dataclass(frozen=True)
class PRCurve:
    class_id: int
    recall: tuple[float, ...]
    precision: tuple[float, ...]

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall, self.precision))


@dataclass
class EvalReport:
    ap: dict[int, float] = field(default_factory=dict)
    mAP: float = 0.0
    curves: dict[int, PRCurve] = field(default_factory=dict)
    counts: dict[int, dict[str, int]] = field(default_factory=dict)
    excluded: list[int] = field(default_factory=list)
    class_names: dict[int, str] = field(default_factory=dict)
    iou_threshold: float = DEFAULT_IOU_THRESHOLD

    def name(self, class_id: int) -> str:
        return self.class_names.get(class_id, str(class_id))

    def to_dict(self) -> dict:
        return {
            "iou_threshold": self.iou_threshold,
            "mAP": self.mAP,
            "classes": [
                {"class_id": cid, "class_name": self.name(cid), "ap": self.ap[cid], **self.counts.get(cid, {})}
                for cid in sorted(self.ap)
            ],
            "excluded_classes": [
                {"class_id": cid, "class_name": self.name(cid), **self.counts.get(cid, {})} for cid in self.excluded
            ],
        }


def match_detections(
    gt: GroundTruthIndex, dets: list[Detection], iou_threshold: float = DEFAULT_IOU_THRESHOLD
) -> MatchResult:
    """Greedy matching in descending confidence; ties keep input order.

    A detection is a TP when the unmatched ground-truth box of the same image
    and class with the highest IoU reaches ``iou_threshold``.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must be in (0, 1]")
    result = MatchResult(iou_threshold=iou_threshold)
    gt_boxes: dict[tuple[str, int], list] = defaultdict(list)
    for image_id, anns in gt.images.items():
        for ann in anns:
            gt_boxes[(image_id, ann.class_id)].append(ann.box)
            result.num_gt[ann.class_id] = result.num_gt.get(ann.class_id, 0) + 1

    by_class: dict[int, list[int]] = defaultdict(list)
    for i, det in enumerate(dets):
        by_class[det.class_id].append(i)

    for class_id, indices in sorted(by_class.items()):
        order = sorted(indices, key=lambda i: -dets[i].confidence)
        used: dict[str, set[int]] = defaultdict(set)
        ranked = []
        for i in order:
            det = dets[i]
            candidates = gt_boxes.get((det.image_id, class_id), [])
            best, best_iou = -1, -1.0
            for j, box in enumerate(candidates):
                if j in used[det.image_id]:
                    continue
                overlap = iou(det.box, box)
                if overlap > best_iou:
                    best, best_iou = j, overlap
            tp = best >= 0 and best_iou >= iou_threshold
            if tp:
                used[det.image_id].add(best)
            ranked.append(RankedDetection(i, det.confidence, tp))
        result.ranked[class_id] = ranked
    return result


def pr_curve(m: MatchResult, class_id: int) -> PRCurve:
    """One (recall, precision) point per detection rank."""
    num_gt = m.num_gt.get(class_id, 0)
    if num_gt == 0:
        raise NoGroundTruthError(f"class {class_id} has no ground truth")
    recall, precision = [], []
    tp = 0
    for k, det in enumerate(m.ranked.get(class_id, []), 1):
        tp += det.is_tp
        recall.append(tp / num_gt)
        precision.append(tp / k)
    return PRCurve(class_id, tuple(recall), tuple(precision))


def average_precision(curve: PRCurve) -> float:
    """All-points interpolated area under the PR curve.

    The precision at each recall step is the maximum precision over all
    points at that recall or beyond.
    """
    rec, prec = curve.recall, curve.precision
    envelope = list(prec)
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    ap = 0.0
    prev = 0.0
    for r, p in zip(rec, envelope):
        if r != prev:
            ap += (r - prev) * p
            prev = r
    return ap


def mean_average_precision(m: MatchResult, class_names: dict[int, str] | None = None) -> EvalReport:
    """Per-class AP and their unweighted mean over classes that have ground truth."""
    report = EvalReport(class_names=dict(class_names or {}), iou_threshold=m.iou_threshold)
    for class_id in m.classes():
        ranked = m.ranked.get(class_id, [])
        tp = sum(d.is_tp for d in ranked)
        report.counts[class_id] = {
            "gt": m.num_gt.get(class_id, 0),
            "detections": len(ranked),
            "tp": tp,
            "fp": len(ranked) - tp,
        }
        if m.num_gt.get(class_id, 0) == 0:
            report.excluded.append(class_id)
            continue
        curve = pr_curve(m, class_id)
        report.curves[class_id] = curve
        report.ap[class_id] = average_precision(curve)
    if not report.ap:
        raise NoGroundTruthError("no class has ground truth; mAP is undefined")
    report.mAP = sum(report.ap.values()) / len(report.ap)
    return report


def evaluate(
    gt: GroundTruthIndex, dets: list[Detection], iou_threshold: float = DEFAULT_IOU_THRESHOLD
) -> EvalReport:
    return mean_average_precision(match_detections(gt, dets, iou_threshold), gt.class_names)


def export_pr_plot_data(report: EvalReport, path: str | os.PathLike) -> None:
    """CSV of (class_name, rank, recall, precision) ordered by class id then rank."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class_name", "rank", "recall", "precision"])
        for class_id in sorted(report.curves):
            curve = report.curves[class_id]
            for rank, (r, p) in enumerate(curve.points(), 1):
                writer.writerow([report.name(class_id), rank, f"{r:.6f}", f"{p:.6f}"])


def write_report(report: EvalReport, path: str | os.PathLike) -> None:
    dump_json(path, report.to_dict())
