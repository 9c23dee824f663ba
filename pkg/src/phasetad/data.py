"""Dataset handling: feature files, manifests, annotations and class splits.

Snippet features live in a tiny self-describing binary container; manifests
and annotations are JSON.  Times in files are seconds; model-side math is in
snippet units, converted only at this boundary via
``seconds = snippets * snippet_stride / frame_rate``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FeatureFormatError

FEATURE_MAGIC = b"PDAF"
FEATURE_VERSION = 1
_U32_MAX = 0xFFFFFFFF


@dataclass
class FeatureSequence:
    """Per-snippet feature matrix for one video."""

    features: np.ndarray      # (T, D_in) float32
    snippet_stride: int       # frames represented by one snippet
    video_id: str

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be (T>=1, D), got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite entries")
        if self.snippet_stride <= 0:
            raise ValueError("snippet_stride must be positive")

    @property
    def num_snippets(self) -> int:
        return self.features.shape[0]


def write_features(seq: FeatureSequence, path: str | Path) -> None:
    """Serialize a feature sequence to the binary container format."""
    t, d = seq.features.shape
    if t > _U32_MAX or d > _U32_MAX:
        raise FeatureFormatError(f"dimensions ({t}, {d}) overflow the u32 header")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<HII", FEATURE_VERSION, t, d))
        fh.write(np.ascontiguousarray(seq.features, dtype="<f4").tobytes())


def read_features(path: str | Path, snippet_stride: int = 1,
                  video_id: str | None = None) -> FeatureSequence:
    """Read a feature sequence; rejects bad magic, truncation and empty T."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 14:
        raise FeatureFormatError(f"{path}: file shorter than header")
    if raw[:4] != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, t, d = struct.unpack("<HII", raw[4:14])
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    if t < 1 or d < 1:
        raise FeatureFormatError(f"{path}: invalid dimensions T={t}, D={d}")
    expected = 14 + 4 * t * d
    if len(raw) != expected:
        raise FeatureFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    features = np.frombuffer(raw, dtype="<f4", offset=14).reshape(t, d).copy()
    return FeatureSequence(features=features, snippet_stride=snippet_stride,
                           video_id=video_id or path.stem)


def snippets_to_seconds(x, snippet_stride: int, frame_rate: float):
    return x * snippet_stride / frame_rate


def seconds_to_snippets(x, snippet_stride: int, frame_rate: float):
    return x * frame_rate / snippet_stride


@dataclass(frozen=True)
class Segment:
    """One annotated action interval, in seconds."""

    start_sec: float
    end_sec: float
    label: str

    def __post_init__(self):
        if not self.start_sec < self.end_sec:
            raise ValueError(f"segment must satisfy start < end, got {self}")
        if self.start_sec < 0:
            raise ValueError(f"segment start must be >= 0, got {self}")


@dataclass
class VideoInfo:
    video_id: str
    feature_path: str     # relative to the manifest location
    duration_seconds: float
    frame_rate: float
    snippet_stride: int


@dataclass
class DatasetManifest:
    """Videos, their annotations and the class vocabulary of a dataset."""

    videos: list[VideoInfo]
    annotations: dict[str, list[Segment]]
    vocabulary: list[str]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        vocab = set(self.vocabulary)
        if len(vocab) != len(self.vocabulary):
            raise DataError("vocabulary contains duplicate classes")
        durations = {v.video_id: v.duration_seconds for v in self.videos}
        for video_id, segments in self.annotations.items():
            if video_id not in durations:
                raise DataError(f"annotations reference unknown video {video_id!r}")
            for seg in segments:
                if seg.label not in vocab:
                    raise DataError(f"annotation label {seg.label!r} not in vocabulary")
                if seg.end_sec > durations[video_id] + 1e-9:
                    raise DataError(
                        f"segment {seg} exceeds duration {durations[video_id]}"
                        f" of video {video_id!r}")

    def video(self, video_id: str) -> VideoInfo:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise DataError(f"unknown video {video_id!r}")

    def load_features(self, video: VideoInfo) -> FeatureSequence:
        return read_features(self.root / video.feature_path,
                             snippet_stride=video.snippet_stride,
                             video_id=video.video_id)

    def to_json_obj(self) -> dict:
        return {
            "vocabulary": list(self.vocabulary),
            "videos": [vars(v).copy() for v in self.videos],
            "annotations": {
                vid: [{"start_sec": s.start_sec, "end_sec": s.end_sec, "label": s.label}
                      for s in segs]
                for vid, segs in sorted(self.annotations.items())
            },
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_obj(), indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
            videos = [VideoInfo(**v) for v in obj["videos"]]
            annotations = {
                vid: [Segment(**s) for s in segs]
                for vid, segs in obj["annotations"].items()
            }
            return cls(videos=videos, annotations=annotations,
                       vocabulary=list(obj["vocabulary"]), root=path.parent)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed manifest {path}: {exc}") from exc


@dataclass
class OpenVocabSplit:
    """Disjoint seen/unseen partition of the class vocabulary."""

    seed: int
    seen: list[str]
    unseen: list[str]
    fraction_seen: float
    index: int = 0

    def __post_init__(self):
        if set(self.seen) & set(self.unseen):
            raise ValueError("seen and unseen classes overlap")
        if not self.seen or not self.unseen:
            raise ValueError("both seen and unseen must be nonempty")


def make_splits(vocab: Sequence[str], fraction_seen: float, n_splits: int,
                seed: int) -> list[OpenVocabSplit]:
    """Generate seeded random seen/unseen partitions of the vocabulary.

    |seen| = round(fraction_seen * |vocab|); each split uses an independent
    generator derived from (seed, split index), so results are stable across
    runs and platforms.
    """
    vocab = list(vocab)
    n_seen = int(fraction_seen * len(vocab) + 0.5)
    if n_seen < 1 or n_seen >= len(vocab):
        raise ValueError(
            f"fraction_seen={fraction_seen} leaves no seen or no unseen class "
            f"for {len(vocab)} classes")
    splits = []
    for i in range(n_splits):
        rng = np.random.default_rng([seed, i])
        order = [vocab[j] for j in rng.permutation(len(vocab))]
        splits.append(OpenVocabSplit(seed=seed, seen=sorted(order[:n_seen]),
                                     unseen=sorted(order[n_seen:]),
                                     fraction_seen=fraction_seen, index=i))
    return splits
