"""Training objectives: classification, foreground and interval-regression losses.

Classification cross-entropy is averaged over foreground timesteps only
(background has no class row); the foreground head is supervised with plain
binary cross-entropy over every timestep; boundary regression uses a 1-D
distance-IoU loss.  The total objective is their unweighted sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch

from .alignment import LocalizationOutput
from .errors import NumericError

_PROB_FLOOR = 1e-7


@dataclass
class SupervisionTargets:
    """Per-timestep supervision derived from ground-truth segments.

    ``class_target`` rows are one-hot exactly where ``fg_target`` is 1 and
    all-zero elsewhere; ``gt_start``/``gt_end`` (snippet units) are only
    meaningful at foreground timesteps.
    """

    class_target: torch.Tensor  # (T, C) one-hot on foreground rows
    fg_target: torch.Tensor     # (T,) in {0, 1}
    gt_start: torch.Tensor      # (T,)
    gt_end: torch.Tensor        # (T,)

    @property
    def foreground_index(self) -> torch.Tensor:
        return torch.nonzero(self.fg_target > 0.5, as_tuple=False).squeeze(1)


def make_supervision_targets(segments: Sequence[tuple[float, float, int]],
                             t: int, n_classes: int,
                             dtype: torch.dtype = torch.float32) -> SupervisionTargets:
    """Rasterize (start, end, class) segments, in snippet units, onto T timesteps.

    Timestep ``t`` is foreground iff some segment covers it
    (start <= t <= end); when several do, the shortest one wins.
    """
    class_target = torch.zeros(t, n_classes, dtype=dtype)
    fg_target = torch.zeros(t, dtype=dtype)
    gt_start = torch.zeros(t, dtype=dtype)
    gt_end = torch.zeros(t, dtype=dtype)
    best_len = torch.full((t,), float("inf"))
    for start, end, cls in segments:
        if not start < end:
            raise ValueError(f"degenerate segment [{start}, {end}]")
        if not 0 <= cls < n_classes:
            raise ValueError(f"class index {cls} outside [0, {n_classes})")
        length = end - start
        for step in range(t):
            if step < start or step > end:
                continue
            if length < best_len[step]:
                best_len[step] = length
                fg_target[step] = 1.0
                class_target[step] = 0.0
                class_target[step, cls] = 1.0
                gt_start[step] = start
                gt_end[step] = end
    return SupervisionTargets(class_target, fg_target, gt_start, gt_end)


def classification_loss(logits: torch.Tensor, targets: SupervisionTargets) -> torch.Tensor:
    """Mean cross-entropy over foreground timesteps; 0 when there are none."""
    if torch.isnan(logits).any():
        raise NumericError("NaN classification logits")
    fg = targets.foreground_index
    if fg.numel() == 0:
        return logits.new_zeros(())
    labels = targets.class_target[fg].argmax(dim=1)
    return torch.nn.functional.cross_entropy(logits[fg], labels)


def foreground_loss(fg_prob: torch.Tensor, fg_target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over all timesteps, probabilities clamped."""
    p = fg_prob.clamp(_PROB_FLOOR, 1.0 - _PROB_FLOOR)
    y = fg_target.to(p.dtype)
    return -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p)).mean()


def _as_interval(interval) -> tuple[torch.Tensor, torch.Tensor]:
    start, end = interval
    start = torch.as_tensor(start, dtype=torch.float64) if not torch.is_tensor(start) else start
    end = torch.as_tensor(end, dtype=torch.float64) if not torch.is_tensor(end) else end
    return start, end


def diou_1d(pred, gt) -> torch.Tensor:
    """Distance-IoU loss between two 1-D intervals.

    1 - IoU + (center gap)^2 / (enclosing span)^2; zero iff the intervals
    coincide, and always below 2.
    """
    ps, pe = _as_interval(pred)
    gs, ge = _as_interval(gt)
    if not float(ps) < float(pe) or not float(gs) < float(ge):
        raise ValueError("intervals must satisfy start < end")
    inter = (torch.minimum(pe, ge) - torch.maximum(ps, gs)).clamp(min=0)
    union = (pe - ps) + (ge - gs) - inter
    iou = inter / union
    span = torch.maximum(pe, ge) - torch.minimum(ps, gs)
    center_gap = (ps + pe) / 2 - (gs + ge) / 2
    return 1.0 - iou + (center_gap / span) ** 2


def localization_loss(loc: LocalizationOutput, targets: SupervisionTargets) -> torch.Tensor:
    """Mean distance-IoU loss at foreground timesteps; 0 when there are none.

    The predicted interval at timestep t is [t - d_start[t], t + d_end[t]].
    """
    fg = targets.foreground_index
    if fg.numel() == 0:
        return loc.d_start.new_zeros(())
    t = fg.to(loc.d_start.dtype)
    ps = t - loc.d_start[fg]
    pe = t + loc.d_end[fg]
    gs = targets.gt_start[fg].to(ps.dtype)
    ge = targets.gt_end[fg].to(ps.dtype)
    inter = (torch.minimum(pe, ge) - torch.maximum(ps, gs)).clamp(min=0)
    union = (pe - ps) + (ge - gs) - inter
    iou = inter / union
    span = torch.maximum(pe, ge) - torch.minimum(ps, gs)
    center_gap = (ps + pe) / 2 - (gs + ge) / 2
    return (1.0 - iou + (center_gap / span) ** 2).mean()


def total_loss(l_cls, l_fg, l_loc, weights: tuple[float, float, float] = (1.0, 1.0, 1.0)):
    """Weighted sum of the three components (all weights default to 1)."""
    for name, value in (("classification", l_cls), ("foreground", l_fg),
                        ("localization", l_loc)):
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not (math.isfinite(v) and v >= 0.0):
            raise ValueError(f"{name} loss must be finite and nonnegative, got {v}")
    w_cls, w_fg, w_loc = weights
    return w_cls * l_cls + w_fg * l_fg + w_loc * l_loc
