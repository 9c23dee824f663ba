"""Cross-modal alignment: attention infusion, phase weighting, fusion, heads."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import set_linear, unit_bank, zero_module
from gradcheck import randomize_parameters
from phasetad.alignment import (
    LocalizationFusion,
    LocalizationHeads,
    PhaseClassScores,
    PhaseWeightNetwork,
    PhaseWeights,
    TextCrossAttention,
    aggregate_scores,
    classify_phase,
    cross_attend,
)
from phasetad.errors import NumericError
from phasetad.phases import CANONICAL_PHASES, Phase


# ---------------------------------------------------------------- cross attention

def test_single_class_attention_adds_projected_value_to_every_row():
    torch.manual_seed(0)
    attn = TextCrossAttention(dim=3, n_heads=1)
    visual = torch.randn(4, 3)
    bank = torch.randn(1, 3)
    out, weights = attn(visual, bank, return_weights=True)
    # with one key the softmax is exactly 1, so each row gains v_proj(bank)
    assert torch.equal(weights, torch.ones(1, 4, 1))
    expected = visual + attn.v_proj(bank).expand(4, 3)
    assert torch.allclose(out, expected, atol=1e-6)


def test_output_rows_depend_only_on_their_own_query():
    torch.manual_seed(1)
    attn = TextCrossAttention(dim=4, n_heads=2)
    bank = torch.randn(3, 4)
    visual = torch.randn(5, 4)
    base = attn(visual, bank)
    modified = visual.clone()
    modified[2] = torch.randn(4) * 7
    out = attn(modified, bank)
    for row in (0, 1, 3, 4):
        assert torch.allclose(out[row], base[row], atol=1e-6)
    assert not torch.allclose(out[2], base[2], atol=1e-3)


def test_cross_attention_numpy_oracle():
    torch.manual_seed(2)
    attn = TextCrossAttention(dim=2, n_heads=1)
    visual = torch.randn(3, 2)
    bank = torch.randn(2, 2)
    out = attn(visual, bank)

    def lin(layer, x):
        return x @ layer.weight.detach().numpy().T + layer.bias.detach().numpy()

    q = lin(attn.q_proj, visual.numpy())
    k = lin(attn.k_proj, bank.numpy())
    v = lin(attn.v_proj, bank.numpy())
    logits = q @ k.T / np.sqrt(2.0)
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w = w / w.sum(axis=1, keepdims=True)
    expected = visual.numpy() + w @ v
    np.testing.assert_allclose(out.detach().numpy(), expected, atol=1e-6)


def test_attention_is_invariant_to_class_row_permutation():
    torch.manual_seed(3)
    attn = TextCrossAttention(dim=4, n_heads=2)
    visual = torch.randn(6, 4)
    bank = torch.randn(5, 4)
    permuted = bank[torch.tensor([4, 2, 0, 1, 3])]
    assert torch.allclose(attn(visual, bank), attn(visual, permuted), atol=1e-6)


def test_cross_attention_validation():
    with pytest.raises(ValueError, match="divide"):
        TextCrossAttention(dim=6, n_heads=4)
    attn = TextCrossAttention(dim=4, n_heads=1)
    with pytest.raises(ValueError, match="nonempty"):
        attn(torch.randn(3, 4), torch.randn(0, 4))
    with pytest.raises(ValueError, match="nonempty"):
        attn(torch.randn(3, 4), torch.randn(4))
    with pytest.raises(ValueError, match="must match"):
        attn(torch.randn(3, 4), torch.randn(2, 5))
    with pytest.raises(ValueError, match="must match"):
        attn(torch.randn(3, 5), torch.randn(2, 4))


def test_cross_attend_unwraps_the_bank():
    torch.manual_seed(4)
    attn = TextCrossAttention(dim=3, n_heads=1)
    bank = unit_bank(Phase.START, torch.randn(2, 3))
    visual = torch.randn(4, 3)
    assert torch.equal(cross_attend(visual, bank, attn), attn(visual, bank.embeddings))


# ---------------------------------------------------------------- classification

def test_classify_phase_orthonormal_bank_reads_off_coordinates():
    bank = unit_bank(Phase.START, [[1.0, 0.0], [0.0, 1.0]])
    refined = torch.tensor([[3.0, -2.0], [0.5, 4.0]])
    scores = classify_phase(refined, bank)
    assert scores.phase is Phase.START
    assert torch.equal(scores.scores, refined)


def test_classify_phase_zero_features_give_zero_logits():
    bank = unit_bank(Phase.END, torch.randn(3, 4))
    scores = classify_phase(torch.zeros(5, 4), bank)
    assert torch.equal(scores.scores, torch.zeros(5, 3))


def test_classify_phase_double_loop_oracle():
    torch.manual_seed(5)
    refined = torch.randn(4, 3)
    vectors = torch.randn(2, 3)
    scores = classify_phase(refined, unit_bank(Phase.MIDDLE, vectors)).scores
    for t in range(4):
        for c in range(2):
            expected = float(sum(refined[t, d] * vectors[c, d] for d in range(3)))
            assert abs(float(scores[t, c]) - expected) < 1e-5


def test_classify_phase_dim_mismatch():
    with pytest.raises(ValueError, match="dim"):
        classify_phase(torch.randn(4, 3), unit_bank(Phase.START, torch.randn(2, 4)))


# ---------------------------------------------------------------- weight network

def test_fresh_network_weighs_phases_exactly_uniformly():
    torch.manual_seed(6)
    net = PhaseWeightNetwork(dim=8, phases=CANONICAL_PHASES, n_heads=2, hidden_dim=4)
    weights = net(torch.randn(10, 8))
    # final scoring layer starts at zero, so logits are 0 and softmax is uniform
    assert torch.equal(weights.weights, torch.full((4,), 0.25))
    assert weights.phases == CANONICAL_PHASES
    assert float(weights.weight_of(Phase.END).detach()) == 0.25


def test_forced_logits_produce_two_one_one_one_weighting():
    """A crafted network emits logits [ln2, 0, 0, 0] -> weights [0.4, 0.2, 0.2, 0.2]."""
    net = PhaseWeightNetwork(dim=4, phases=CANONICAL_PHASES, n_heads=1, hidden_dim=8)
    zero_module(net.attn)
    with torch.no_grad():
        net.phase_embed.zero_()
        net.phase_embed[0, 0] = 1.0
        net.score_fc1.weight.zero_()
        net.score_fc1.weight[:, 0] = 1.0
        net.score_fc1.bias.zero_()
        net.score_fc2.weight.fill_(math.atanh(math.log(2.0)) / 8)
        net.score_fc2.bias.zero_()
    weights = net(torch.zeros(5, 4))
    np.testing.assert_allclose(weights.weights.detach().numpy(),
                               [0.4, 0.2, 0.2, 0.2], atol=1e-4)
    assert abs(float(weights.weights.sum()) - 1.0) < 1e-6


def test_sigmoid_mode_fresh_network_gives_half_everywhere():
    torch.manual_seed(7)
    net = PhaseWeightNetwork(dim=4, phases=(Phase.START, Phase.END), n_heads=1,
                             hidden_dim=4, mode="sigmoid")
    weights = net(torch.randn(3, 4))
    assert weights.mode == "sigmoid"
    assert torch.equal(weights.weights, torch.full((2,), 0.5))


def test_per_phase_input_mode():
    torch.manual_seed(8)
    phases = (Phase.START, Phase.END)
    net = PhaseWeightNetwork(dim=4, phases=phases, n_heads=1, hidden_dim=4)
    per_phase = {Phase.START: torch.randn(5, 4), Phase.END: torch.randn(7, 4)}
    weights = net.forward_per_phase(per_phase)
    assert torch.equal(weights.weights, torch.full((2,), 0.5))  # fresh net: uniform
    with pytest.raises(KeyError):
        net.forward_per_phase({Phase.START: torch.randn(5, 4)})


def test_weight_network_rejects_non_finite_input():
    net = PhaseWeightNetwork(dim=4, phases=CANONICAL_PHASES, n_heads=1, hidden_dim=4)
    bad = torch.zeros(3, 4)
    bad[1, 2] = float("inf")
    with pytest.raises(NumericError, match="non-finite"):
        net(bad)


def test_weight_network_mode_validation():
    with pytest.raises(ValueError, match="unknown weight mode"):
        PhaseWeightNetwork(dim=4, phases=CANONICAL_PHASES, mode="hardmax")


def test_logit_bound_caps_weight_disparity():
    """tanh-bounded logits keep max/min weight ratio at or below e^2."""
    torch.manual_seed(9)
    for seed in range(5):
        net = PhaseWeightNetwork(dim=6, phases=CANONICAL_PHASES, n_heads=2,
                                 hidden_dim=8)
        randomize_parameters(net, seed=seed, scale=3.0)
        w = net(torch.randn(8, 6)).weights
        ratio = float(w.max() / w.min())
        assert ratio <= math.exp(2.0) + 1e-4


@settings(deadline=None, max_examples=20)
@given(seed=st.integers(min_value=0, max_value=10_000),
       t=st.integers(min_value=1, max_value=12))
def test_softmax_weights_stay_on_the_simplex(seed, t):
    torch.manual_seed(seed)
    net = PhaseWeightNetwork(dim=4, phases=CANONICAL_PHASES, n_heads=2, hidden_dim=8)
    randomize_parameters(net, seed=seed)
    weights = net(torch.randn(t, 4)).weights
    assert torch.all(weights >= 0)
    assert abs(float(weights.sum()) - 1.0) <= 1e-6


# ---------------------------------------------------------------- aggregation

def _scores(phase, value, t=2, c=3):
    return PhaseClassScores(phase=phase, scores=torch.full((t, c), float(value)))


def test_one_hot_weights_select_a_single_phase():
    per_phase = {Phase.START: _scores(Phase.START, 1.0),
                 Phase.END: _scores(Phase.END, 5.0)}
    weights = PhaseWeights(phases=(Phase.START, Phase.END),
                           weights=torch.tensor([0.0, 1.0]))
    assert torch.equal(aggregate_scores(per_phase, weights),
                       per_phase[Phase.END].scores)


def test_uniform_weights_average_the_phases():
    per_phase = {Phase.START: _scores(Phase.START, 1.0),
                 Phase.END: _scores(Phase.END, 5.0)}
    weights = PhaseWeights(phases=(Phase.START, Phase.END),
                           weights=torch.tensor([0.5, 0.5]))
    assert torch.equal(aggregate_scores(per_phase, weights), torch.full((2, 3), 3.0))


def test_weighted_sum_hand_value():
    # 0.4 * 1 + 0.6 * 3 = 2.2
    per_phase = {Phase.START: _scores(Phase.START, 1.0, t=1, c=1),
                 Phase.END: _scores(Phase.END, 3.0, t=1, c=1)}
    weights = PhaseWeights(phases=(Phase.START, Phase.END),
                           weights=torch.tensor([0.4, 0.6]))
    out = aggregate_scores(per_phase, weights)
    assert abs(float(out[0, 0]) - 2.2) < 1e-6


def test_aggregate_missing_phase_is_a_key_error():
    weights = PhaseWeights(phases=(Phase.START, Phase.END),
                           weights=torch.tensor([0.5, 0.5]))
    with pytest.raises(KeyError, match="missing scores"):
        aggregate_scores({Phase.START: _scores(Phase.START, 1.0)}, weights)


def test_aggregation_is_linear_in_the_scores():
    torch.manual_seed(10)
    phases = (Phase.START, Phase.MIDDLE, Phase.END)
    weights = PhaseWeights(phases=phases, weights=torch.softmax(torch.randn(3), dim=0))
    a = {p: PhaseClassScores(p, torch.randn(4, 2)) for p in phases}
    b = {p: PhaseClassScores(p, torch.randn(4, 2)) for p in phases}
    combo = {p: PhaseClassScores(p, 2.0 * a[p].scores + 3.0 * b[p].scores)
             for p in phases}
    lhs = aggregate_scores(combo, weights)
    rhs = 2.0 * aggregate_scores(a, weights) + 3.0 * aggregate_scores(b, weights)
    assert torch.allclose(lhs, rhs, atol=1e-5)


# ---------------------------------------------------------------- fusion

def _identity_fusion(dim: int, n_phases: int) -> LocalizationFusion:
    """Craft weights so fusion returns the first phase's features unchanged."""
    fusion = LocalizationFusion(dim=dim, n_phases=n_phases, hidden_dim=2 * dim)
    eye = np.eye(dim, dtype=np.float32)
    fc1 = np.zeros((2 * dim, n_phases * dim), dtype=np.float32)
    fc1[:dim, :dim] = eye
    fc1[dim:, :dim] = -eye
    set_linear(fusion.fc1, fc1)
    set_linear(fusion.fc2, np.eye(2 * dim, dtype=np.float32))
    set_linear(fusion.fc3, np.concatenate([eye, -eye], axis=1))
    return fusion


def test_fusion_identity_construction_recovers_first_phase():
    torch.manual_seed(11)
    fusion = _identity_fusion(dim=3, n_phases=2)
    first = torch.randn(5, 3)
    out = fusion([first, torch.randn(5, 3)])
    # relu(x) - relu(-x) == x, so the crafted MLP is exact up to float error
    assert torch.allclose(out, first, atol=1e-6)


def test_zeroed_fusion_outputs_zero():
    fusion = LocalizationFusion(dim=2, n_phases=3, hidden_dim=4)
    zero_module(fusion)
    out = fusion([torch.randn(4, 2) for _ in range(3)])
    assert torch.equal(out, torch.zeros(4, 2))


def test_fusion_numpy_oracle():
    torch.manual_seed(12)
    fusion = LocalizationFusion(dim=2, n_phases=2, hidden_dim=3)
    feats = [torch.randn(4, 2), torch.randn(4, 2)]
    out = fusion(feats)

    def lin(layer, x):
        return x @ layer.weight.detach().numpy().T + layer.bias.detach().numpy()

    h = np.concatenate([f.numpy() for f in feats], axis=1)
    h = np.maximum(lin(fusion.fc1, h), 0.0)
    h = np.maximum(lin(fusion.fc2, h), 0.0)
    expected = lin(fusion.fc3, h)
    np.testing.assert_allclose(out.detach().numpy(), expected, atol=1e-5)


def test_fusion_validates_inputs():
    fusion = LocalizationFusion(dim=2, n_phases=2, hidden_dim=4)
    with pytest.raises(ValueError, match="expected 2 phase features"):
        fusion([torch.randn(4, 2)])
    with pytest.raises(ValueError, match="disagree"):
        fusion([torch.randn(4, 2), torch.randn(5, 2)])


# ---------------------------------------------------------------- heads

def test_zeroed_heads_hit_their_activation_fixed_points():
    heads = LocalizationHeads(dim=3, eps=1e-4)
    zero_module(heads)
    out = heads(torch.randn(6, 3))
    assert torch.equal(out.fg_prob, torch.full((6,), 0.5))  # sigmoid(0)
    expected = math.log(2.0) + 1e-4                          # softplus(0) + eps
    np.testing.assert_allclose(out.d_start.detach().numpy(), expected, atol=1e-6)
    np.testing.assert_allclose(out.d_end.detach().numpy(), expected, atol=1e-6)


def test_heads_softplus_at_ten():
    heads = LocalizationHeads(dim=2, eps=1e-4)
    zero_module(heads)
    with torch.no_grad():
        heads.reg_head.bias.copy_(torch.tensor([10.0, 10.0]))
    out = heads(torch.randn(3, 2))
    expected = math.log1p(math.exp(10.0)) + 1e-4  # 10.0000454 + eps
    np.testing.assert_allclose(out.d_start.detach().numpy(), expected, atol=1e-4)
    assert abs(expected - (10.0 + 4.54e-5 + 1e-4)) < 1e-6


def test_heads_always_produce_valid_intervals():
    torch.manual_seed(13)
    heads = LocalizationHeads(dim=4, eps=1e-4)
    for seed in range(10):
        randomize_parameters(heads, seed=seed, scale=2.0)
        out = heads(torch.randn(100, 4))
        assert torch.all(out.fg_prob > 0) and torch.all(out.fg_prob < 1)
        assert torch.all(out.d_start >= 1e-4)
        assert torch.all(out.d_end >= 1e-4)
        t = torch.arange(100, dtype=torch.float32)
        assert torch.all(t + out.d_end > t - out.d_start)  # nonempty intervals


def test_heads_reject_non_finite():
    heads = LocalizationHeads(dim=2)
    bad = torch.ones(3, 2)
    bad[0, 0] = float("nan")
    with pytest.raises(NumericError, match="non-finite"):
        heads(bad)
