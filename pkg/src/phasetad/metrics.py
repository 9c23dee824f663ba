"""Detection evaluation: temporal IoU, per-class AP and mean AP.

Matching is greedy in descending score order with deterministic tie-breaking,
one detection per ground-truth segment, and AP uses all-point interpolation
(area under the precision envelope).  Classes with no ground truth are
excluded from the mean rather than scored as zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

from .data import Segment

if TYPE_CHECKING:  # pragma: no cover - import would be circular at runtime
    from .postprocess import Detection

THUMOS_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
ACTIVITYNET_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

_PRESETS = {"thumos": THUMOS_THRESHOLDS, "activitynet": ACTIVITYNET_THRESHOLDS}


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation thresholds, either explicit or from a named preset."""

    thresholds: tuple[float, ...] = THUMOS_THRESHOLDS

    def __post_init__(self):
        if not self.thresholds:
            raise ValueError("need at least one tIoU threshold")
        for thr in self.thresholds:
            if not 0 < thr <= 1:
                raise ValueError(f"tIoU threshold must be in (0, 1], got {thr}")

    @classmethod
    def preset(cls, name: str) -> "EvalConfig":
        try:
            return cls(thresholds=_PRESETS[name.lower()])
        except KeyError:
            raise ValueError(f"unknown preset {name!r}, know {sorted(_PRESETS)}") from None


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Temporal intersection over union of two (start, end) intervals."""
    (a0, a1), (b0, b1) = a, b
    if not (a0 < a1 and b0 < b1):
        raise ValueError(f"intervals must satisfy start < end, got {a} and {b}")
    intersection = max(0.0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - intersection
    return intersection / union


def average_precision(detections: Sequence["Detection"],
                      ground_truth: Sequence[tuple[str, Segment]],
                      threshold: float) -> float:
    """AP of one class at one tIoU threshold.

    ``ground_truth`` holds (video_id, segment) pairs of this class only.
    Detections are visited in descending score (ties broken by start time,
    then video id); each claims the highest-overlap unmatched segment in its
    video, counting as a true positive iff that overlap reaches the threshold.
    """
    if not ground_truth:
        raise ValueError("ground truth is empty; exclude the class instead")
    gt_by_video: dict[str, list[Segment]] = {}
    for video_id, seg in ground_truth:
        gt_by_video.setdefault(video_id, []).append(seg)
    matched = {vid: [False] * len(segs) for vid, segs in gt_by_video.items()}

    order = sorted(detections, key=lambda d: (-d.score, d.t_start, d.video_id))
    tps = []
    for det in order:
        best_iou, best_idx = 0.0, -1
        for idx, seg in enumerate(gt_by_video.get(det.video_id, [])):
            if matched[det.video_id][idx]:
                continue
            overlap = tiou((det.t_start, det.t_end), (seg.start_sec, seg.end_sec))
            if overlap > best_iou:
                best_iou, best_idx = overlap, idx
        if best_idx >= 0 and best_iou >= threshold:
            matched[det.video_id][best_idx] = True
            tps.append(1)
        else:
            tps.append(0)

    n_gt = len(ground_truth)
    precisions, recalls = [], []
    tp_cum = 0
    for rank, tp in enumerate(tps, start=1):
        tp_cum += tp
        precisions.append(tp_cum / rank)
        recalls.append(tp_cum / n_gt)

    # Area under the precision envelope: at every recall step take the best
    # precision achievable at that recall or beyond.
    ap = 0.0
    prev_recall = 0.0
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    for precision, recall in zip(precisions, recalls):
        if recall > prev_recall:
            ap += (recall - prev_recall) * precision
            prev_recall = recall
    return ap


@dataclass
class EvalResult:
    """Per-class AP by threshold plus the derived means."""

    thresholds: tuple[float, ...]
    per_class: dict[float, dict[str, float]]
    map_per_threshold: dict[float, float]
    average_map: float
    evaluated_classes: list[str] = field(default_factory=list)
    skipped_classes: list[str] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "per_class": {str(t): self.per_class[t] for t in self.thresholds},
            "map_per_threshold": {str(t): self.map_per_threshold[t]
                                  for t in self.thresholds},
            "average_map": self.average_map,
            "evaluated_classes": self.evaluated_classes,
            "skipped_classes": self.skipped_classes,
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_obj(), indent=2) + "\n",
                              encoding="utf-8")

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class"] + [f"ap@{t}" for t in self.thresholds])
            for name in self.evaluated_classes:
                writer.writerow([name] + [f"{self.per_class[t][name]:.6f}"
                                          for t in self.thresholds])
            writer.writerow(["mAP"] + [f"{self.map_per_threshold[t]:.6f}"
                                       for t in self.thresholds])


def mean_ap(detections: Sequence["Detection"],
            annotations: Mapping[str, Sequence[Segment]],
            classes: Sequence[str],
            config: EvalConfig = EvalConfig()) -> EvalResult:
    """Evaluate detections against ground truth over the given classes.

    Only the listed classes are scored; those without any ground-truth
    segment are reported in ``skipped_classes`` and do not dilute the mean.
    """
    gt_by_class: dict[str, list[tuple[str, Segment]]] = {c: [] for c in classes}
    for video_id, segments in annotations.items():
        for seg in segments:
            if seg.label in gt_by_class:
                gt_by_class[seg.label].append((video_id, seg))
    dets_by_class: dict[str, list] = {c: [] for c in classes}
    for det in detections:
        if det.label in dets_by_class:
            dets_by_class[det.label].append(det)

    evaluated = [c for c in classes if gt_by_class[c]]
    skipped = [c for c in classes if not gt_by_class[c]]
    if not evaluated:
        raise ValueError("no evaluated class has ground truth")

    per_class: dict[float, dict[str, float]] = {}
    map_per_threshold: dict[float, float] = {}
    for thr in config.thresholds:
        aps = {c: average_precision(dets_by_class[c], gt_by_class[c], thr)
               for c in evaluated}
        per_class[thr] = aps
        map_per_threshold[thr] = sum(aps.values()) / len(aps)
    average_map = sum(map_per_threshold.values()) / len(config.thresholds)
    return EvalResult(thresholds=tuple(config.thresholds), per_class=per_class,
                      map_per_threshold=map_per_threshold, average_map=average_map,
                      evaluated_classes=evaluated, skipped_classes=skipped)
