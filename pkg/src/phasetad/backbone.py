"""Temporal transformer over snippet features.

Maps a T x D_in sequence of per-snippet features to the shared T x D visual
representation: a per-timestep input projection, learned absolute positional
embeddings, then a stack of pre-norm residual blocks (multi-head
self-attention followed by a feed-forward network).  There is no batch
dimension; one video is one sequence.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import NumericError


class MultiHeadSelfAttention(nn.Module):
    """Standard multi-head self-attention for a single (T, D) sequence."""

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"head count {n_heads} must divide dim {dim}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        t = x.shape[0]
        q = self.q_proj(x).view(t, self.n_heads, self.head_dim).transpose(0, 1)
        k = self.k_proj(x).view(t, self.n_heads, self.head_dim).transpose(0, 1)
        v = self.v_proj(x).view(t, self.n_heads, self.head_dim).transpose(0, 1)
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        weights = torch.softmax(logits, dim=-1)          # (H, T, T)
        out = (weights @ v).transpose(0, 1).reshape(t, self.dim)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    """Pre-norm residual block: x + MHSA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, dim: int, n_heads: int, ff_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ff_dim)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        if return_weights:
            attn_out, weights = self.attn(self.norm1(x), return_weights=True)
        else:
            attn_out, weights = self.attn(self.norm1(x)), None
        x = x + attn_out
        x = x + self.ffn(self.norm2(x))
        return (x, weights) if return_weights else x


class TemporalBackbone(nn.Module):
    """Input projection + positional encoding + L pre-norm transformer layers.

    With all layer weights at zero the blocks reduce to the identity, so the
    output equals the positionally-encoded projected input; tests rely on
    this to pin the wiring.
    """

    def __init__(self, in_dim: int, dim: int, n_layers: int, n_heads: int,
                 ff_dim: int | None = None, max_len: int = 2048):
        super().__init__()
        if n_layers < 1:
            raise ValueError("need at least one layer")
        self.in_dim = in_dim
        self.dim = dim
        self.input_proj = nn.Linear(in_dim, dim)
        self.pos_embed = nn.Parameter(torch.randn(max_len, dim) * 0.02)
        self.layers = nn.ModuleList(
            EncoderLayer(dim, n_heads, ff_dim or 4 * dim) for _ in range(n_layers))

    def project_input(self, features: torch.Tensor) -> torch.Tensor:
        """Per-timestep affine map from raw feature width to model width."""
        if features.ndim != 2 or features.shape[1] != self.in_dim:
            raise ValueError(
                f"expected (T, {self.in_dim}) features, got {tuple(features.shape)}")
        return self.input_proj(features)

    def encode(self, h: torch.Tensor, return_attention: bool = False):
        """Run the transformer stack on an already-projected (T, D) sequence."""
        t = h.shape[0]
        if t > self.pos_embed.shape[0]:
            raise ValueError(f"sequence length {t} exceeds max_len {self.pos_embed.shape[0]}")
        h = h + self.pos_embed[:t]
        attention = []
        for i, layer in enumerate(self.layers):
            if return_attention:
                h, w = layer(h, return_weights=True)
                attention.append(w)
            else:
                h = layer(h)
            if not torch.isfinite(h).all():
                raise NumericError(f"non-finite activations after layer {i}", layer=i)
        return (h, attention) if return_attention else h

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.encode(self.project_input(features))
