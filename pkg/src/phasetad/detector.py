"""The assembled open-vocabulary detector.

One forward pass: encode the snippet features, filter them per phase, refine
each phase branch with cross-attention against that phase's class-text bank,
score classes per branch, aggregate with phase weights, and regress
foreground probability and boundary distances from the fused branches.

Class banks are built from description text on every call (they depend on
the vocabulary, which differs between training and open-vocabulary
inference), so gradients reach the per-phase text projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import torch
from torch import nn

from .alignment import (
    LocalizationFusion,
    LocalizationHeads,
    LocalizationOutput,
    PhaseClassScores,
    PhaseWeightNetwork,
    PhaseWeights,
    TextCrossAttention,
    aggregate_scores,
    classify_phase,
    cross_attend,
)
from .backbone import TemporalBackbone
from .config import AlignmentMode, FilteringMode, MaskStyle, ModelConfig, WeightInput
from .filtering import (
    ForegroundMask,
    apply_mask,
    binarize,
    foreground_score,
    soft_mask,
    static_mask,
)
from .phases import Phase
from .semantics import (
    DescriptionLibrary,
    PhaseDescriptionSet,
    PhaseEmbeddingBank,
    TextEncoder,
    encode_phase_bank,
    merge_descriptions,
)


@dataclass
class DetectorOutput:
    """Everything one forward pass produces, keyed by phase where applicable."""

    class_scores: torch.Tensor                       # (T, C) aggregated logits
    per_phase_scores: dict[Phase, PhaseClassScores]
    phase_weights: PhaseWeights
    localization: LocalizationOutput
    masks: dict[Phase, ForegroundMask]
    refined: dict[Phase, torch.Tensor]


class PhaseDetector(nn.Module):
    """Backbone, per-phase filtering/alignment and localization in one module."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.bank_phases = cfg.bank_phases
        self.backbone = TemporalBackbone(cfg.d_in, cfg.dim, cfg.n_layers,
                                         cfg.n_heads, ff_dim=cfg.ff_dim,
                                         max_len=cfg.max_len)
        self.text_proj = nn.ModuleDict(
            {p.value: nn.Linear(cfg.text_dim, cfg.dim) for p in self.bank_phases})
        if cfg.text_dim == cfg.dim:
            # Square projections start at identity: banks begin exactly where
            # the text encoder put them and learn only the deviation.
            for proj in self.text_proj.values():
                nn.init.eye_(proj.weight)
                nn.init.zeros_(proj.bias)
        self.cross_attn = TextCrossAttention(cfg.dim, cfg.cross_heads)
        if cfg.alignment is AlignmentMode.PHASE_ADAPTIVE:
            self.weight_net = PhaseWeightNetwork(
                cfg.dim, self.bank_phases, n_heads=cfg.weight_heads,
                hidden_dim=cfg.weight_hidden, mode=cfg.weight_mode)
        else:
            self.weight_net = None
        self.fusion = LocalizationFusion(cfg.dim, len(self.bank_phases),
                                         hidden_dim=cfg.fusion_hidden)
        self.heads = LocalizationHeads(cfg.dim, eps=cfg.head_eps)
        self._n_temporal = sum(1 for p in self.bank_phases if p.is_temporal)

    def build_banks(self, vocab: Sequence[str], library: DescriptionLibrary,
                    encoder: TextEncoder) -> dict[Phase, PhaseEmbeddingBank]:
        """Class-text banks for the current vocabulary, one per bank phase.

        The label mode never touches the description library; the merge mode
        reads each class once and concatenates; the phase modes encode each
        phase's description separately.
        """
        if self.cfg.alignment is AlignmentMode.GLOBAL_LABEL:
            descs = {name: PhaseDescriptionSet(name, {Phase.GLOBAL: name})
                     for name in vocab}
        elif self.cfg.alignment is AlignmentMode.GLOBAL_MERGE:
            descs = {name: PhaseDescriptionSet(
                name, {Phase.GLOBAL: merge_descriptions(library.get(name))})
                for name in vocab}
        else:
            descs = {name: library.get(name) for name in vocab}
        return {p: encode_phase_bank(vocab, descs, encoder, p, self.text_proj[p.value])
                for p in self.bank_phases}

    def _mask_for(self, phase: Phase, h: torch.Tensor,
                  bank: PhaseEmbeddingBank) -> ForegroundMask:
        if self.cfg.filtering is FilteringMode.NONE:
            return ForegroundMask(phase=phase,
                                  mask=torch.ones(h.shape[0], dtype=h.dtype))
        if self.cfg.filtering is FilteringMode.STATIC:
            return static_mask(h.shape[0], phase, max(self._n_temporal, 1),
                               dtype=h.dtype)
        score = foreground_score(h, bank)
        if self.cfg.mask_style is MaskStyle.BINARY:
            return binarize(score)
        return soft_mask(score)

    def forward(self, features: torch.Tensor,
                banks: Mapping[Phase, PhaseEmbeddingBank]) -> DetectorOutput:
        h = self.backbone(features)
        masks: dict[Phase, ForegroundMask] = {}
        refined: dict[Phase, torch.Tensor] = {}
        per_phase: dict[Phase, PhaseClassScores] = {}
        for phase in self.bank_phases:
            bank = banks[phase]
            masks[phase] = self._mask_for(phase, h, bank)
            branch = cross_attend(apply_mask(h, masks[phase]), bank, self.cross_attn)
            refined[phase] = branch
            per_phase[phase] = classify_phase(branch, bank)

        if self.weight_net is not None:
            if self.cfg.weight_input is WeightInput.POOLED:
                weights = self.weight_net(h)
            else:
                weights = self.weight_net.forward_per_phase(refined)
        else:
            n = len(self.bank_phases)
            weights = PhaseWeights(
                phases=self.bank_phases,
                weights=torch.full((n,), 1.0 / n, dtype=h.dtype), mode="uniform")

        class_scores = aggregate_scores(per_phase, weights)
        fused = self.fusion([refined[p] for p in self.bank_phases])
        localization = self.heads(fused)
        return DetectorOutput(class_scores=class_scores, per_phase_scores=per_phase,
                              phase_weights=weights, localization=localization,
                              masks=masks, refined=refined)
