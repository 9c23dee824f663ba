"""Turn per-snippet model outputs into scored detections.

Every (timestep, class) pair becomes a candidate whose score is the class
probability times the foreground probability; boundaries come from the
regressed start/end distances around the snippet index and are converted to
seconds only here.  Candidates are filtered by a score floor, capped to the
top k, then deduplicated with class-wise Gaussian soft suppression.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import torch

from .alignment import LocalizationOutput
from .data import VideoInfo, snippets_to_seconds
from .metrics import tiou


@dataclass(frozen=True)
class Detection:
    """One scored action interval, in seconds."""

    video_id: str
    t_start: float
    t_end: float
    label: str
    score: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"detection must satisfy t_start < t_end, got {self}")
        if not math.isfinite(self.score):
            raise ValueError(f"detection score must be finite, got {self.score}")


def _sort_key(det: Detection):
    return (-det.score, det.t_start, det.label, det.video_id)


def assemble_proposals(class_scores: torch.Tensor,
                       loc: LocalizationOutput,
                       video: VideoInfo,
                       vocabulary: Sequence[str],
                       score_floor: float = 0.01,
                       top_k: int = 200) -> list[Detection]:
    """Build candidate detections from one video's outputs.

    ``class_scores`` are raw per-snippet logits (T, C); they are softmaxed
    over classes and multiplied by the foreground probability.  The floor is
    applied before the top-k cap.  Boundaries are clamped to the video extent.
    """
    t_len, n_classes = class_scores.shape
    if n_classes != len(vocabulary):
        raise ValueError(f"got {n_classes} score columns for {len(vocabulary)} classes")
    if loc.fg_prob.shape[0] != t_len:
        raise ValueError("localization output length does not match scores")
    probs = torch.softmax(class_scores.detach().double(), dim=1)
    combined = probs * loc.fg_prob.detach().double().unsqueeze(1)
    starts = torch.arange(t_len, dtype=torch.float64) - loc.d_start.detach().double()
    ends = torch.arange(t_len, dtype=torch.float64) + loc.d_end.detach().double()

    detections = []
    for step, cls in (combined >= score_floor).nonzero(as_tuple=False).tolist():
        start_sec = snippets_to_seconds(float(starts[step]), video.snippet_stride,
                                        video.frame_rate)
        end_sec = snippets_to_seconds(float(ends[step]), video.snippet_stride,
                                      video.frame_rate)
        start_sec = min(max(start_sec, 0.0), video.duration_seconds)
        end_sec = min(max(end_sec, 0.0), video.duration_seconds)
        if not start_sec < end_sec:
            continue
        detections.append(Detection(video_id=video.video_id, t_start=start_sec,
                                    t_end=end_sec, label=vocabulary[cls],
                                    score=float(combined[step, cls])))
    detections.sort(key=_sort_key)
    return detections[:top_k]


def soft_nms(detections: Sequence[Detection], sigma: float = 0.5,
             prune_below: float = 1e-3) -> list[Detection]:
    """Gaussian soft suppression over one group of detections.

    Greedily keeps the highest-scoring detection and decays the rest by
    ``exp(-tiou^2 / sigma)``; candidates whose decayed score falls below the
    prune threshold are dropped.  Callers are expected to group by video and
    class first (see :func:`suppress`).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    remaining = sorted(detections, key=_sort_key)
    kept: list[Detection] = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        decayed = []
        for det in remaining:
            overlap = tiou((best.t_start, best.t_end), (det.t_start, det.t_end))
            new_score = det.score * math.exp(-(overlap ** 2) / sigma)
            if new_score >= prune_below:
                decayed.append(replace(det, score=new_score))
        decayed.sort(key=_sort_key)
        remaining = decayed
    return kept


def suppress(detections: Sequence[Detection], sigma: float = 0.5,
             prune_below: float = 1e-3) -> list[Detection]:
    """Apply soft suppression independently per (video, class) group."""
    groups: dict[tuple[str, str], list[Detection]] = {}
    for det in detections:
        groups.setdefault((det.video_id, det.label), []).append(det)
    out: list[Detection] = []
    for key in sorted(groups):
        out.extend(soft_nms(groups[key], sigma=sigma, prune_below=prune_below))
    out.sort(key=_sort_key)
    return out


def write_detections(path: str | Path, detections: Sequence[Detection]) -> None:
    """Export detections as JSON lines with scores rounded to 6 decimals."""
    with open(path, "w", encoding="utf-8") as fh:
        for det in detections:
            fh.write(json.dumps({
                "video_id": det.video_id,
                "t_start": round(det.t_start, 6),
                "t_end": round(det.t_end, 6),
                "label": det.label,
                "score": round(det.score, 6),
            }) + "\n")


def read_detections(path: str | Path) -> list[Detection]:
    detections = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                detections.append(Detection(**json.loads(line)))
    return detections
