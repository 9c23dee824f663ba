"""Text-guided foreground filtering of visual features, one mask per phase.

For each phase, every timestep is scored by its best similarity against that
phase's class embeddings, the scores are softmax-normalized over time, and
timesteps at or above the temporal mean are kept.  The binary mask is a hard
threshold and intentionally blocks gradients; the score path itself is
differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .phases import Phase
from .semantics import PhaseEmbeddingBank


@dataclass
class ForegroundScore:
    """Softmax-over-time relevance of each timestep to one phase's semantics."""

    phase: Phase
    scores: torch.Tensor  # (T,), nonnegative, sums to 1


@dataclass
class ForegroundMask:
    phase: Phase
    mask: torch.Tensor  # (T,), entries in {0, 1}


def foreground_score(visual: torch.Tensor, bank: PhaseEmbeddingBank) -> ForegroundScore:
    """Score timesteps by max similarity to any class, normalized over time.

    raw_t = max_c <visual[t], bank[c]>; scores = softmax over t of raw.
    """
    if visual.ndim != 2:
        raise ValueError(f"expected (T, D) visual features, got {tuple(visual.shape)}")
    if visual.shape[1] != bank.dim:
        raise ValueError(f"feature dim {visual.shape[1]} != bank dim {bank.dim}")
    raw = (visual @ bank.embeddings.T).max(dim=1).values
    return ForegroundScore(phase=bank.phase, scores=torch.softmax(raw, dim=0))


def binarize(score: ForegroundScore) -> ForegroundMask:
    """Threshold scores at their temporal mean (ties kept as foreground).

    The mean of a softmax vector is always 1/T.  The result is detached:
    no gradient flows through the thresholding.
    """
    scores = score.scores.detach()
    mask = (scores >= scores.mean()).to(scores.dtype)
    return ForegroundMask(phase=score.phase, mask=mask)


def soft_mask(score: ForegroundScore) -> ForegroundMask:
    """Ablation-only non-binary mask: T * scores, so a uniform video passes through."""
    scores = score.scores
    return ForegroundMask(phase=score.phase, mask=scores * scores.shape[0])


def apply_mask(visual: torch.Tensor, fg: ForegroundMask) -> torch.Tensor:
    """Zero out masked timesteps, broadcasting over the feature dimension.

    Masked rows stay in the sequence (shapes are static); they simply carry
    zero features into downstream attention.
    """
    if visual.shape[0] != fg.mask.shape[0]:
        raise ValueError(f"mask length {fg.mask.shape[0]} != T {visual.shape[0]}")
    return visual * fg.mask.unsqueeze(1)


# Segment order for the static-filtering baseline, by temporal segment count.
_SEGMENT_ORDER: dict[int, tuple[Phase, ...]] = {
    1: (Phase.START,),
    2: (Phase.START, Phase.END),
    3: (Phase.START, Phase.MIDDLE, Phase.END),
    4: (Phase.START, Phase.MID1, Phase.MID2, Phase.END),
    5: (Phase.START, Phase.MID1, Phase.MID2, Phase.MID3, Phase.END),
}


def static_mask(t: int, phase: Phase, n_phases: int, *,
                dtype: torch.dtype = torch.float32) -> ForegroundMask:
    """Fixed-segment baseline: temporal phase k of n keeps the k-th block.

    The video is cut into n contiguous blocks of size T/n, any remainder
    going to the earlier blocks; the global phase keeps everything.
    """
    if phase is Phase.GLOBAL:
        return ForegroundMask(phase=phase, mask=torch.ones(t, dtype=dtype))
    order = _SEGMENT_ORDER.get(n_phases)
    if order is None:
        raise ValueError(f"unsupported temporal segment count {n_phases}")
    if phase not in order:
        raise ValueError(f"phase {phase} is not part of a {n_phases}-segment layout")
    if t < n_phases:
        raise ValueError(f"T={t} is too short for {n_phases} segments")
    k = order.index(phase)
    base, rem = divmod(t, n_phases)
    sizes = [base + (1 if i < rem else 0) for i in range(n_phases)]
    start = sum(sizes[:k])
    mask = torch.zeros(t, dtype=dtype)
    mask[start:start + sizes[k]] = 1.0
    return ForegroundMask(phase=phase, mask=mask)
