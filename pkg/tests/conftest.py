"""Shared fixtures: a small generated dataset, desk-scale configs, doubles."""

from __future__ import annotations

import pytest
import torch

from phasetad.config import ModelConfig, TrainConfig
from phasetad.phases import Phase
from phasetad.semantics import DescriptionLibrary, HashedTextEncoder
from phasetad.synthetic import SyntheticSpec, generate_synthetic

DESK_SPEC = SyntheticSpec(
    n_classes=4,
    n_videos=10,
    d_in=16,
    t_range=(16, 24),
    len_range=(4, 8),
    max_instances=2,
    phase_pool_size=None,
    noise_std=0.05,
    background_std=0.05,
    seed=11,
)

DESK_MODEL = ModelConfig(
    d_in=16,
    text_dim=16,
    dim=16,
    n_layers=1,
    n_heads=2,
    weight_heads=2,
    weight_hidden=8,
    fusion_hidden=16,
    max_len=64,
)

DESK_TRAIN = TrainConfig(seed=0, epochs=4, lr=1e-3)


class TrackingLibrary(DescriptionLibrary):
    """Description library that records every class ever read from it."""

    def __init__(self, sets):
        super().__init__(sets)
        self.accessed: set[str] = set()

    def get(self, class_name: str):
        self.accessed.add(class_name)
        return super().get(class_name)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """One small synthetic dataset shared by training-level tests."""
    out = tmp_path_factory.mktemp("desk_dataset")
    return generate_synthetic(DESK_SPEC, out)


@pytest.fixture()
def desk_library(desk_dataset):
    return DescriptionLibrary.from_file(desk_dataset.descriptions_path)


@pytest.fixture()
def desk_encoder(desk_dataset):
    return HashedTextEncoder.from_overrides_file(desk_dataset.overrides_path)


def set_linear(linear: torch.nn.Linear, weight, bias=None) -> None:
    """Overwrite a linear layer with explicit values (no grad tracking)."""
    with torch.no_grad():
        linear.weight.copy_(torch.as_tensor(weight, dtype=linear.weight.dtype))
        if bias is None:
            linear.bias.zero_()
        else:
            linear.bias.copy_(torch.as_tensor(bias, dtype=linear.bias.dtype))


def zero_module(module: torch.nn.Module) -> None:
    """Zero every parameter of a module in place."""
    with torch.no_grad():
        for param in module.parameters():
            param.zero_()


def unit_bank(phase: Phase, vectors) -> "PhaseEmbeddingBank":
    """Build a bank directly from a matrix of row vectors."""
    from phasetad.semantics import PhaseEmbeddingBank

    embeddings = torch.as_tensor(vectors, dtype=torch.float32)
    return PhaseEmbeddingBank(
        phase=phase, embeddings=embeddings,
        class_index={f"c{i}": i for i in range(embeddings.shape[0])})
