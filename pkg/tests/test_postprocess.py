"""Proposal assembly, Gaussian soft suppression and detection files."""

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import assemble_oracle, hard_nms_oracle
from phasetad.alignment import LocalizationOutput
from phasetad.data import VideoInfo
from phasetad.postprocess import (
    Detection,
    assemble_proposals,
    read_detections,
    soft_nms,
    suppress,
    write_detections,
)


def _video(video_id="v0", duration=100.0, fps=1.0, stride=1):
    return VideoInfo(video_id=video_id, feature_path=f"{video_id}.feat",
                     duration_seconds=duration, frame_rate=fps,
                     snippet_stride=stride)


def _loc(fg, d_start, d_end):
    return LocalizationOutput(fg_prob=torch.as_tensor(fg, dtype=torch.float32),
                              d_start=torch.as_tensor(d_start, dtype=torch.float32),
                              d_end=torch.as_tensor(d_end, dtype=torch.float32))


def _det(start, end, score, video_id="v0", label="a"):
    return Detection(video_id=video_id, t_start=float(start), t_end=float(end),
                     label=label, score=float(score))


# ---------------------------------------------------------------- Detection

def test_detection_validation():
    with pytest.raises(ValueError, match="t_start < t_end"):
        _det(2.0, 2.0, 0.5)
    with pytest.raises(ValueError, match="t_start < t_end"):
        _det(3.0, 1.0, 0.5)
    with pytest.raises(ValueError, match="finite"):
        _det(0.0, 1.0, float("nan"))


# ---------------------------------------------------------------- assembly

def test_gated_out_foreground_yields_no_proposals():
    scores = torch.zeros(4, 3)
    loc = _loc([1e-7] * 4, [1.0] * 4, [1.0] * 4)
    assert assemble_proposals(scores, loc, _video(), ["a", "b", "c"],
                              score_floor=0.01) == []


def test_single_step_single_class_scores_one():
    scores = torch.tensor([[3.7]])  # softmax over one class is exactly 1
    loc = _loc([1.0], [0.5], [0.5])
    dets = assemble_proposals(scores, loc, _video(), ["only"])
    assert len(dets) == 1
    det = dets[0]
    assert det.score == 1.0
    assert det.label == "only"
    assert (det.t_start, det.t_end) == (-0.5 + 0.5, 0.5)  # clamped at 0


def test_two_by_two_matches_enumeration_oracle():
    torch.manual_seed(0)
    scores = torch.tensor([[1.0, 0.0], [0.2, 0.8]])
    loc = _loc([0.9, 0.6], [1.5, 0.5], [0.5, 2.5])
    video = _video(duration=10.0)
    dets = assemble_proposals(scores, loc, video, ["a", "b"], score_floor=0.01,
                              top_k=200)
    expected = assemble_oracle(scores, loc.fg_prob, loc.d_start, loc.d_end,
                               video, ["a", "b"], score_floor=0.01, top_k=200)
    assert dets == expected
    assert len(dets) == 4


def test_floor_applies_before_top_k():
    # two strong candidates and two weak (below-floor) ones; with top_k=1 the
    # floor must not resurrect the weak ones
    scores = torch.tensor([[4.0, 0.0], [4.0, 0.0]])
    loc = _loc([1.0, 1.0], [0.5, 0.5], [0.5, 0.5])
    dets = assemble_proposals(scores, loc, _video(), ["a", "b"],
                              score_floor=0.05, top_k=1)
    assert len(dets) == 1
    assert dets[0].label == "a"
    all_dets = assemble_proposals(scores, loc, _video(), ["a", "b"],
                                  score_floor=0.05, top_k=200)
    assert {d.label for d in all_dets} == {"a"}  # class b stayed below floor


def test_boundaries_clamp_to_video_extent():
    scores = torch.tensor([[1.0]])
    loc = _loc([1.0], [5.0], [99.0])
    dets = assemble_proposals(scores, loc, _video(duration=3.0), ["a"])
    assert dets[0].t_start == 0.0
    assert dets[0].t_end == 3.0


def test_degenerate_intervals_are_dropped():
    # both boundaries clamp to 0 -> empty interval -> dropped
    scores = torch.tensor([[1.0]])
    loc = _loc([1.0], [5.0], [0.0])
    video = _video(duration=3.0)
    # interval [t - 5, t + 0] = [-5, 0] clamps to [0, 0]
    assert assemble_proposals(scores, loc, video, ["a"]) == []


def test_assembly_shape_validation():
    loc = _loc([1.0, 1.0], [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ValueError, match="score columns"):
        assemble_proposals(torch.zeros(2, 3), loc, _video(), ["a", "b"])
    with pytest.raises(ValueError, match="length"):
        assemble_proposals(torch.zeros(3, 2), loc, _video(), ["a", "b"])


def test_stride_and_frame_rate_convert_to_seconds():
    scores = torch.tensor([[1.0]])
    loc = _loc([1.0], [0.5], [0.5])
    video = _video(duration=100.0, fps=2.0, stride=8)
    dets = assemble_proposals(scores, loc, video, ["a"])
    # snippet interval [-0.5, 0.5] scaled by stride/fps = 4 then clamped at 0
    assert dets[0].t_start == 0.0
    assert dets[0].t_end == 2.0


def test_output_is_sorted_and_capped():
    torch.manual_seed(1)
    scores = torch.randn(20, 3)
    loc = _loc(torch.rand(20).tolist(), [0.7] * 20, [0.7] * 20)
    dets = assemble_proposals(scores, loc, _video(), ["a", "b", "c"],
                              score_floor=0.0, top_k=10)
    assert len(dets) == 10
    assert all(dets[i].score >= dets[i + 1].score for i in range(9))


@settings(deadline=None, max_examples=30)
@given(t=st.integers(1, 8), c=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_assembly_matches_oracle_on_random_instances(t, c, seed):
    torch.manual_seed(seed)
    scores = torch.randn(t, c)
    loc = _loc(torch.rand(t).tolist(), (torch.rand(t) * 3).tolist(),
               (torch.rand(t) * 3).tolist())
    video = _video(duration=float(t + 2))
    vocab = [f"c{i}" for i in range(c)]
    dets = assemble_proposals(scores, loc, video, vocab, score_floor=0.01,
                              top_k=50)
    expected = assemble_oracle(scores, loc.fg_prob, loc.d_start, loc.d_end,
                               video, vocab, score_floor=0.01, top_k=50)
    assert dets == expected


# ---------------------------------------------------------------- soft NMS

def test_single_detection_is_untouched():
    det = _det(0.0, 1.0, 0.7)
    assert soft_nms([det]) == [det]


def test_disjoint_detections_keep_exact_scores():
    a, b = _det(0.0, 1.0, 0.9), _det(5.0, 6.0, 0.8)
    out = soft_nms([a, b], sigma=0.5)
    assert out == [a, b]  # exp(0) = 1: scores bitwise unchanged


def test_identical_intervals_decay_by_exp_minus_two():
    a, b = _det(0.0, 1.0, 0.9), _det(0.0, 1.0, 0.8)
    out = soft_nms([a, b], sigma=0.5)
    assert out[0] == a
    assert abs(out[1].score - 0.8 * math.exp(-2.0)) < 1e-4
    assert abs(out[1].score - 0.1083) < 1e-4


def test_prune_threshold_drops_decayed_detections():
    a, b = _det(0.0, 1.0, 0.9), _det(0.0, 1.0, 0.8)
    out = soft_nms([a, b], sigma=0.5, prune_below=0.2)
    assert out == [a]  # 0.8 e^-2 = 0.108 < 0.2


def test_soft_nms_parameter_validation():
    with pytest.raises(ValueError, match="sigma"):
        soft_nms([_det(0.0, 1.0, 0.5)], sigma=0.0)
    with pytest.raises(ValueError, match="sigma"):
        soft_nms([_det(0.0, 1.0, 0.5)], sigma=-1.0)


def test_soft_nms_output_is_sorted_by_score():
    torch.manual_seed(2)
    dets = [_det(float(i) * 0.3, float(i) * 0.3 + 2.0, float(s))
            for i, s in enumerate(torch.rand(12).tolist())]
    out = soft_nms(dets, sigma=0.5)
    assert all(out[i].score >= out[i + 1].score for i in range(len(out) - 1))


@settings(deadline=None, max_examples=40)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 12))
def test_survivors_are_a_subset_with_decayed_scores(seed, n):
    torch.manual_seed(seed)
    dets = []
    for i in range(n):
        start = float(torch.rand(()).item() * 8)
        width = 0.5 + float(torch.rand(()).item() * 4)
        dets.append(_det(start, start + width, float(torch.rand(()).item())))
    out = soft_nms(dets, sigma=0.5)
    by_interval = {(d.t_start, d.t_end, d.label): d.score for d in dets}
    assert len(out) <= len(dets)
    for det in out:
        original = by_interval[(det.t_start, det.t_end, det.label)]
        assert det.score <= original + 1e-12


def test_sigma_to_zero_limit_equals_hard_nms():
    # integer endpoints keep nonzero overlaps >= 1/28, so the decay underflows
    dets = [_det(float(s), float(s + w), 0.05 + 0.9 * ((i * 37 % 19) / 19))
            for i, (s, w) in enumerate([(0, 3), (1, 2), (5, 2), (6, 4), (11, 1),
                                        (11, 3), (2, 1), (8, 2)])]
    out = soft_nms(dets, sigma=1e-6, prune_below=1e-3)
    assert out == hard_nms_oracle(dets)


# ---------------------------------------------------------------- suppress

def test_suppress_is_independent_per_video_and_class():
    # identical intervals but different (video, class) groups: nothing decays
    dets = [
        _det(0.0, 1.0, 0.9, video_id="v0", label="a"),
        _det(0.0, 1.0, 0.8, video_id="v0", label="b"),
        _det(0.0, 1.0, 0.7, video_id="v1", label="a"),
    ]
    out = suppress(dets, sigma=0.5)
    assert sorted(out, key=lambda d: -d.score) == dets


def test_suppress_decays_within_a_group_only():
    dets = [
        _det(0.0, 1.0, 0.9, label="a"),
        _det(0.0, 1.0, 0.8, label="a"),   # same group: decays
        _det(0.0, 1.0, 0.85, label="b"),  # other class: untouched
    ]
    out = suppress(dets, sigma=0.5)
    scores = {d.label: [] for d in out}
    for d in out:
        scores[d.label].append(d.score)
    assert scores["b"] == [0.85]
    assert max(scores["a"]) == 0.9
    assert abs(min(scores["a"]) - 0.8 * math.exp(-2.0)) < 1e-6


# ---------------------------------------------------------------- files

def test_detection_file_round_trip(tmp_path):
    dets = [
        _det(0.0, 1.25, 0.875, video_id="v0", label="a"),
        _det(3.5, 7.0, 0.5, video_id="v1", label="b"),
    ]
    path = tmp_path / "dets.jsonl"
    write_detections(path, dets)
    assert read_detections(path) == dets
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 2


def test_read_detections_skips_blank_lines(tmp_path):
    path = tmp_path / "dets.jsonl"
    det = _det(0.0, 1.0, 0.5)
    write_detections(path, [det])
    path.write_text(path.read_text() + "\n\n")
    assert read_detections(path) == [det]
