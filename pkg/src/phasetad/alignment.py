"""Per-phase cross-modal alignment and its adaptive aggregation.

Each phase branch refines the filtered visual features with one layer of
cross-attention against that phase's class embeddings and scores classes by
dot product.  A small weighting network predicts how much each phase
contributes to the final classification; localization runs on a fusion of
all phase branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import torch
from torch import nn

from .backbone import MultiHeadSelfAttention
from .errors import NumericError
from .phases import Phase
from .semantics import PhaseEmbeddingBank


@dataclass
class PhaseClassScores:
    """Raw per-timestep class logits for one phase branch."""

    phase: Phase
    scores: torch.Tensor  # (T, C)


@dataclass
class PhaseWeights:
    """Contribution of each phase to the aggregated classification."""

    phases: tuple[Phase, ...]
    weights: torch.Tensor  # (|P|,)
    mode: str = "softmax"

    def weight_of(self, phase: Phase) -> torch.Tensor:
        return self.weights[self.phases.index(phase)]


@dataclass
class LocalizationOutput:
    """Per-timestep foreground probability and boundary distances (snippet units)."""

    fg_prob: torch.Tensor   # (T,), in (0, 1)
    d_start: torch.Tensor   # (T,), > 0
    d_end: torch.Tensor     # (T,), > 0


class TextCrossAttention(nn.Module):
    """One cross-attention layer: visual rows query the phase's class embeddings.

    Keys and values come from the bank, a residual from the query is added,
    and there is no output projection or feed-forward on top.  Each output
    row depends only on its own query row.
    """

    def __init__(self, dim: int, n_heads: int = 1):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"head count {n_heads} must divide dim {dim}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)

    def forward(self, visual: torch.Tensor, bank: torch.Tensor,
                return_weights: bool = False):
        if bank.ndim != 2 or bank.shape[0] < 1:
            raise ValueError("bank must be a nonempty C x D matrix")
        if visual.shape[1] != self.dim or bank.shape[1] != self.dim:
            raise ValueError("visual/bank feature dims must match the attention dim")
        t, c = visual.shape[0], bank.shape[0]
        q = self.q_proj(visual).view(t, self.n_heads, self.head_dim).transpose(0, 1)
        k = self.k_proj(bank).view(c, self.n_heads, self.head_dim).transpose(0, 1)
        v = self.v_proj(bank).view(c, self.n_heads, self.head_dim).transpose(0, 1)
        weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        infused = (weights @ v).transpose(0, 1).reshape(t, self.dim)
        out = visual + infused
        if return_weights:
            return out, weights
        return out


def cross_attend(visual: torch.Tensor, bank: PhaseEmbeddingBank,
                 attn: TextCrossAttention) -> torch.Tensor:
    """Infuse a phase's class-text information into its filtered visual features."""
    return attn(visual, bank.embeddings)


def classify_phase(refined: torch.Tensor, bank: PhaseEmbeddingBank) -> PhaseClassScores:
    """Raw class logits: dot products of refined visual rows with bank rows."""
    if refined.shape[1] != bank.dim:
        raise ValueError(f"feature dim {refined.shape[1]} != bank dim {bank.dim}")
    return PhaseClassScores(phase=bank.phase, scores=refined @ bank.embeddings.T)


class PhaseWeightNetwork(nn.Module):
    """Predicts per-phase contribution weights from the video representation.

    The time-pooled visual feature is replicated into one token per phase,
    learnable phase embeddings are added, one residual MHSA layer mixes the
    tokens, and a two-layer MLP maps each token to a scalar logit.  Softmax
    over logits is the default; independent sigmoids are available as an
    alternative mode.
    """

    def __init__(self, dim: int, phases: Sequence[Phase], n_heads: int = 4,
                 hidden_dim: int = 1024, mode: str = "softmax"):
        super().__init__()
        if mode not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown weight mode {mode!r}")
        self.phases = tuple(phases)
        self.mode = mode
        self.phase_embed = nn.Parameter(torch.randn(len(self.phases), dim) * 0.02)
        self.attn = MultiHeadSelfAttention(dim, n_heads)
        self.score_fc1 = nn.Linear(dim, hidden_dim)
        self.score_fc2 = nn.Linear(hidden_dim, 1)
        # Zero logits at init: weighting starts uniform and departs from the
        # plain average only as the training signal accumulates.
        nn.init.zeros_(self.score_fc2.weight)
        nn.init.zeros_(self.score_fc2.bias)

    def _weigh(self, tokens: torch.Tensor) -> PhaseWeights:
        tokens = tokens + self.attn(tokens)
        logits = self.score_fc2(torch.relu(self.score_fc1(tokens))).squeeze(-1)
        # Bounded logits: weighting can favor informative phases several-fold
        # but can never silence a branch outright.
        logits = torch.tanh(logits)
        if self.mode == "softmax":
            weights = torch.softmax(logits, dim=0)
        else:
            weights = torch.sigmoid(logits)
        return PhaseWeights(phases=self.phases, weights=weights, mode=self.mode)

    def forward(self, visual: torch.Tensor) -> PhaseWeights:
        """Weights from the (pre-masking) video features, pooled over time."""
        pooled = visual.mean(dim=0)
        if not torch.isfinite(pooled).all():
            raise NumericError("non-finite pooled feature in weight network")
        tokens = pooled.unsqueeze(0).expand(len(self.phases), -1) + self.phase_embed
        return self._weigh(tokens)

    def forward_per_phase(self, per_phase: Mapping[Phase, torch.Tensor]) -> PhaseWeights:
        """Alternative input mode: each token pools its own phase's features."""
        pooled = torch.stack([per_phase[p].mean(dim=0) for p in self.phases])
        if not torch.isfinite(pooled).all():
            raise NumericError("non-finite pooled feature in weight network")
        return self._weigh(pooled + self.phase_embed)


def aggregate_scores(per_phase: Mapping[Phase, PhaseClassScores],
                     weights: PhaseWeights) -> torch.Tensor:
    """Weighted sum of per-phase class logits: sum_p w_p * scores_p."""
    total = None
    for phase in weights.phases:
        if phase not in per_phase:
            raise KeyError(f"missing scores for phase {phase}")
        term = weights.weight_of(phase) * per_phase[phase].scores
        total = term if total is None else total + term
    return total


class LocalizationFusion(nn.Module):
    """Concatenate all phase branches and project back to model width.

    Per-timestep 3-layer MLP: (|P| * D) -> hidden -> hidden -> D with ReLU
    between layers.
    """

    def __init__(self, dim: int, n_phases: int, hidden_dim: int = 1024):
        super().__init__()
        self.dim = dim
        self.n_phases = n_phases
        self.fc1 = nn.Linear(n_phases * dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)
        self.fc3 = nn.Linear(hidden_dim, dim)

    def forward(self, per_phase: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(per_phase) != self.n_phases:
            raise ValueError(f"expected {self.n_phases} phase features, got {len(per_phase)}")
        shapes = {tuple(f.shape) for f in per_phase}
        if len(shapes) != 1:
            raise ValueError(f"phase features disagree in shape: {sorted(shapes)}")
        h = torch.cat(list(per_phase), dim=1)
        h = torch.relu(self.fc1(h))
        h = torch.relu(self.fc2(h))
        return self.fc3(h)


class LocalizationHeads(nn.Module):
    """Foreground head (logistic) and boundary regression head (softplus + eps).

    Distances are strictly positive so every predicted interval
    [t - d_start, t + d_end] is nonempty.
    """

    def __init__(self, dim: int, eps: float = 1e-4):
        super().__init__()
        self.eps = eps
        self.fg_head = nn.Linear(dim, 1)
        self.reg_head = nn.Linear(dim, 2)

    def forward(self, fused: torch.Tensor) -> LocalizationOutput:
        fg_prob = torch.sigmoid(self.fg_head(fused)).squeeze(-1)
        dist = torch.nn.functional.softplus(self.reg_head(fused)) + self.eps
        if not (torch.isfinite(fg_prob).all() and torch.isfinite(dist).all()):
            raise NumericError("non-finite localization outputs")
        return LocalizationOutput(fg_prob=fg_prob, d_start=dist[:, 0], d_end=dist[:, 1])
