"""Synthetic benchmark generator with controllable phase structure.

Each action class owns one unit-norm prototype vector per temporal phase
(start / middle / end); a class instance inside a video is painted as three
consecutive blocks of those prototypes plus Gaussian noise, over a noise
background.  The paired text side is emitted as exact-text encoder overrides,
so description embeddings point at the same prototypes the video features are
built from:

* a phase description maps to that phase's prototype,
* the whole-action description maps to the mean of the ``summary_phases``
  prototypes (all three temporal phases by default),
* the concatenation of all descriptions maps to the mean of its four
  sentences' targets: every phase is spelled out, but the paragraph is
  still compressed into a single vector.

Bare class labels get no override: encoders fall back to hashed random
vectors, which is what makes label-only alignment transfer poorly to classes
never seen in training.  ``summary_noise_std`` corrupts only the
whole-action and concatenated targets, modelling that a single holistic
sentence (or one overlong paragraph) aligns less precisely with the visual
stream than focused per-phase sentences do.

Cross-class transfer is controlled by ``phase_pool_size``: phase prototypes
are drawn from small per-slot pools of motion primitives, so distinct
actions are built from common phase-level building blocks (every class
keeps a unique primitive triple).  Whatever seen/unseen split is drawn
later, the primitives of an unseen class were almost surely part of some
seen class - the structure that phase-wise alignment can exploit and
label-level alignment cannot.  A per-slot tuple such as ``(2, 4, 4)``
makes the start slot coarse (many classes open alike) while middles and
ends stay distinctive; how informative each phase is then becomes a
property of the phase itself, which adaptive weighting can discover and
uniform averaging cannot.  With ``phase_pool_size=None`` every class gets
independent prototypes and only explicitly paired classes overlap.

``reversed_class_pairs`` makes class pairs whose primitive triples are
reversals of each other: both classes share the same middle primitive and
swap start and end.  Such twins have identical primitive multisets, hence
identical whole-action mean vectors - a single holistic embedding cannot
separate them even in principle, while phase-wise branches can, because
they see which primitive occurs in which temporal slot.

``shared_phase_pairs`` additionally aliases temporal prototypes between two
further classes (``shared_phases_per_pair`` of them, one by default),
creating actions that are indistinguishable during the shared phases and
can only be separated by the remaining ones.

``summary_phases`` controls which temporal slots the whole-action
description's embedding actually captures (all three by default).  A lossy
summary - say start and middle only - models a one-sentence description
that misses how the action ends: classes differing only in their final
phase then collide for any alignment built on the holistic embedding,
while per-phase alignment keeps them apart through the end-phase branch.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetManifest, FeatureSequence, Segment, VideoInfo, write_features
from .errors import ConfigError
from .phases import Phase
from .semantics import (
    PhaseDescriptionSet,
    merge_descriptions,
    wrap_description,
    write_description_file,
)

_TEMPORAL = (Phase.START, Phase.MIDDLE, Phase.END)

_PHASE_TEXT = {
    Phase.START: "The person would prepare to perform {noun}, settling into the opening stance.",
    Phase.MIDDLE: "The person would carry out the core movement of {noun} with steady control.",
    Phase.END: "The person would finish {noun} and come to a rest.",
    Phase.GLOBAL: "The person would perform {noun} from start to finish.",
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of one generated dataset; equal specs give identical bytes."""

    n_classes: int = 8
    n_videos: int = 24
    d_in: int = 32
    t_range: tuple[int, int] = (24, 48)
    len_range: tuple[int, int] = (6, 12)
    max_instances: int = 2
    phase_pool_size: int | tuple[int, int, int] | None = None
    reversed_class_pairs: int = 0
    shared_phase_pairs: int = 0
    shared_phases_per_pair: int = 1
    summary_phases: tuple[Phase, ...] = _TEMPORAL
    noise_std: float = 0.1
    background_std: float = 0.1
    text_noise_std: float = 0.0
    summary_noise_std: float = 0.0
    frame_rate: float = 1.0
    snippet_stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ConfigError("need at least 1 class")
        if self.n_videos < 1:
            raise ConfigError("need at least 1 video")
        if self.d_in < 4:
            raise ConfigError("d_in must be at least 4")
        sizes = self.pool_sizes
        if sizes is not None:
            if len(sizes) != 3:
                raise ConfigError(
                    "phase_pool_size must be one int or three (start, middle, end)")
            if min(sizes) < 1:
                raise ConfigError("every phase pool needs at least one primitive")
            capacity = sizes[0] * sizes[1] * sizes[2]
            if capacity < self.n_classes:
                raise ConfigError(
                    f"pools of {sizes} primitives cannot give "
                    f"{self.n_classes} classes distinct primitive triples")
            if self.reversed_class_pairs > 0:
                if sizes[0] != sizes[2]:
                    raise ConfigError(
                        "reversed pairs need equal start and end pool sizes")
                max_pairs = sizes[0] * (sizes[0] - 1) * sizes[1] // 2
                if self.reversed_class_pairs > max_pairs:
                    raise ConfigError(
                        f"pools of {sizes} primitives admit at most "
                        f"{max_pairs} reversed pairs")
        if self.reversed_class_pairs < 0 or self.shared_phase_pairs < 0:
            raise ConfigError("pair counts must be nonnegative")
        if self.shared_phases_per_pair not in (1, 2):
            raise ConfigError("shared_phases_per_pair must be 1 or 2")
        if (not self.summary_phases
                or len(set(self.summary_phases)) != len(self.summary_phases)
                or any(p not in _TEMPORAL for p in self.summary_phases)):
            raise ConfigError(
                "summary_phases must be a nonempty subset of the temporal phases")
        if 2 * (self.reversed_class_pairs + self.shared_phase_pairs) > self.n_classes:
            raise ConfigError(
                f"{self.reversed_class_pairs} reversed plus "
                f"{self.shared_phase_pairs} shared pairs need "
                f"{2 * (self.reversed_class_pairs + self.shared_phase_pairs)} "
                f"classes, have {self.n_classes}")
        if self.len_range[0] < 3 or self.len_range[0] > self.len_range[1]:
            raise ConfigError(f"invalid instance length range {self.len_range}")
        if self.t_range[0] > self.t_range[1] or self.t_range[0] < self.len_range[1] + 2:
            raise ConfigError(
                f"t_range {self.t_range} cannot fit an instance of length "
                f"{self.len_range[1]} plus margins")
        if min(self.noise_std, self.background_std, self.text_noise_std,
               self.summary_noise_std) < 0:
            raise ConfigError("noise levels must be nonnegative")
        if self.max_instances < 1:
            raise ConfigError("max_instances must be at least 1")

    @property
    def pool_sizes(self) -> tuple[int, int, int] | None:
        """Per-slot pool sizes, normalized from the scalar shorthand."""
        if self.phase_pool_size is None:
            return None
        if isinstance(self.phase_pool_size, int):
            return (self.phase_pool_size,) * 3
        return tuple(self.phase_pool_size)

    @property
    def class_names(self) -> list[str]:
        width = len(str(self.n_classes - 1))
        return [f"action_{i:0{width}d}" for i in range(self.n_classes)]


@dataclass
class SyntheticDataset:
    """Everything generate_synthetic wrote, plus the ground-truth prototypes."""

    manifest: DatasetManifest
    manifest_path: Path
    descriptions_path: Path
    overrides_path: Path
    prototypes: dict[str, dict[Phase, np.ndarray]] = field(repr=False)


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    vec = rng.standard_normal(dim)
    return (vec / np.linalg.norm(vec)).astype(np.float32)


def _pool_assignments(rng: np.random.Generator, n_classes: int,
                      pool_sizes: tuple[int, int, int],
                      reversed_pairs: int) -> list[tuple[int, ...]]:
    """Distinct primitive-index triples, one per class, drawn uniformly.

    The first ``2 * reversed_pairs`` classes come in twin pairs whose triples
    are reversals of each other (their start and end primitives differ, so
    reversal changes the triple).
    """
    taken: set[tuple[int, ...]] = set()
    triples: list[tuple[int, ...]] = []

    def draw() -> tuple[int, ...]:
        return tuple(int(rng.integers(0, size)) for size in pool_sizes)

    while len(triples) < 2 * reversed_pairs:
        triple = draw()
        twin = triple[::-1]
        if triple[0] == triple[2] or triple in taken or twin in taken:
            continue
        taken.update((triple, twin))
        triples.extend((triple, twin))
    while len(triples) < n_classes:
        triple = draw()
        if triple not in taken:
            taken.add(triple)
            triples.append(triple)
    return triples


def _shared_slots(spec: SyntheticSpec, k: int) -> tuple[int, ...]:
    """Slot indices aliased within shared pair k.

    Single-slot pairs rotate through the temporal slots; two-slot pairs all
    share start and middle, so pair members differ only in how they end.
    """
    return (k % 3,) if spec.shared_phases_per_pair == 1 else (0, 1)


def build_prototypes(spec: SyntheticSpec) -> dict[str, dict[Phase, np.ndarray]]:
    """Unit-norm prototype per (class, temporal phase) plus a summary vector.

    The Phase.GLOBAL entry is the mean of the ``summary_phases`` prototypes:
    what a single whole-action sentence conveys about the class.

    With a phase pool, each temporal slot owns ``phase_pool_size`` primitive
    vectors and every class picks one per slot (triples stay unique).  When
    reversed pairs are requested, the start and end slots share one pool so
    that reversing a triple is meaningful; the first
    ``reversed_class_pairs`` class pairs then get mutually reversed triples
    (identical primitive multisets, so their full-summary vectors coincide).
    Shared pair k aliases ``shared_phases_per_pair`` temporal prototypes
    between the next two classes after the reversed block.
    """
    rng = np.random.default_rng([spec.seed, 0])
    names = spec.class_names
    base = 2 * spec.reversed_class_pairs
    protos: dict[str, dict[Phase, np.ndarray]] = {}
    if spec.phase_pool_size is None:
        for name in names:
            protos[name] = {phase: _unit(rng, spec.d_in) for phase in _TEMPORAL}
        for r in range(spec.reversed_class_pairs):
            first, twin = protos[names[2 * r]], protos[names[2 * r + 1]]
            twin[Phase.START] = first[Phase.END].copy()
            twin[Phase.MIDDLE] = first[Phase.MIDDLE].copy()
            twin[Phase.END] = first[Phase.START].copy()
        for k in range(spec.shared_phase_pairs):
            a, b = names[base + 2 * k], names[base + 2 * k + 1]
            for slot in _shared_slots(spec, k):
                protos[b][_TEMPORAL[slot]] = protos[a][_TEMPORAL[slot]].copy()
    else:
        sizes = spec.pool_sizes
        sized_slots = (_TEMPORAL if spec.reversed_class_pairs == 0
                       else (Phase.START, Phase.MIDDLE))
        pools = {phase: [_unit(rng, spec.d_in) for _ in range(sizes[i])]
                 for i, phase in enumerate(sized_slots)}
        pools.setdefault(Phase.END, pools[Phase.START])
        triples = [list(t) for t in _pool_assignments(
            rng, spec.n_classes, sizes, spec.reversed_class_pairs)]
        for k in range(spec.shared_phase_pairs):
            slots = _shared_slots(spec, k)
            a, b = base + 2 * k, base + 2 * k + 1
            for slot in slots:
                triples[b][slot] = triples[a][slot]
            # Forcing the shared slots may collide two classes into the same
            # triple; deterministically reassign the free slots until unique.
            taken = {tuple(t) for i, t in enumerate(triples) if i != b}
            if tuple(triples[b]) in taken:
                free = [s for s in range(3) if s not in slots]
                candidates = itertools.product(
                    *(range(sizes[s]) for s in free))
                for combo in candidates:
                    trial = list(triples[b])
                    for slot, value in zip(free, combo):
                        trial[slot] = value
                    if tuple(trial) not in taken:
                        triples[b] = trial
                        break
                else:
                    raise ConfigError(
                        "cannot keep primitive triples unique; increase "
                        "phase_pool_size or reduce shared_phase_pairs")
        for name, triple in zip(names, triples):
            protos[name] = {phase: pools[phase][idx].copy()
                            for phase, idx in zip(_TEMPORAL, triple)}
    for per_phase in protos.values():
        per_phase[Phase.GLOBAL] = np.mean(
            [per_phase[p] for p in spec.summary_phases], axis=0).astype(np.float32)
    return protos


def build_descriptions(spec: SyntheticSpec) -> dict[str, PhaseDescriptionSet]:
    """Deterministic four-phase description set per class."""
    sets = {}
    for name in spec.class_names:
        noun = name.replace("_", " ")
        sets[name] = PhaseDescriptionSet(
            name, {p: t.format(noun=noun) for p, t in _PHASE_TEXT.items()})
    return sets


def build_encoder_overrides(
        spec: SyntheticSpec,
        prototypes: dict[str, dict[Phase, np.ndarray]],
        descriptions: dict[str, PhaseDescriptionSet]) -> dict[str, np.ndarray]:
    """Exact-text override table tying wrapped description texts to prototypes.

    Whole-action and concatenated texts carry ``summary_noise_std`` extra
    corruption on top of ``text_noise_std``.
    """
    rng = np.random.default_rng([spec.seed, 2])
    summary_std = float(np.hypot(spec.text_noise_std, spec.summary_noise_std))
    overrides: dict[str, np.ndarray] = {}

    def put(text: str, target: np.ndarray, std: float) -> None:
        noisy = target + std * rng.standard_normal(spec.d_in)
        overrides[text] = noisy.astype(np.float32)

    for name, pds in descriptions.items():
        for phase, text in pds.descriptions.items():
            std = summary_std if phase is Phase.GLOBAL else spec.text_noise_std
            put(wrap_description(text), prototypes[name][phase], std)
        merged_target = np.mean(
            [prototypes[name][p] for p in pds.descriptions], axis=0)
        put(wrap_description(merge_descriptions(pds)), merged_target, summary_std)
    return overrides


def _place_instances(rng: np.random.Generator, t: int, lengths: list[int],
                     min_gap: int = 1) -> list[tuple[int, int]]:
    """Non-overlapping (start, length) placements, dropping lengths that no
    longer fit."""
    kept: list[int] = []
    for length in lengths:
        used = sum(kept) + min_gap * len(kept)
        if used + length > t:
            continue
        kept.append(length)
    free = t - sum(kept) - min_gap * (len(kept) - 1)
    cuts = np.sort(rng.integers(0, free + 1, size=len(kept)))
    placed: list[tuple[int, int]] = []
    offset = 0
    for i, length in enumerate(kept):
        placed.append((int(cuts[i]) + offset, length))
        offset += length + min_gap
    return placed


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> SyntheticDataset:
    """Write feature files, manifest, descriptions and encoder overrides.

    Class assignment cycles through a reshuffled class list so every class
    receives a comparable number of instances.  With ``noise_std == 0``,
    painted snippets equal their phase prototype exactly.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    prototypes = build_prototypes(spec)
    descriptions = build_descriptions(spec)
    overrides = build_encoder_overrides(spec, prototypes, descriptions)

    master = np.random.default_rng([spec.seed, 1])
    class_cycle: list[str] = []
    videos: list[VideoInfo] = []
    annotations: dict[str, list[Segment]] = {}
    width = len(str(spec.n_videos - 1))
    for v in range(spec.n_videos):
        rng = np.random.default_rng([spec.seed, 1, v])
        t = int(rng.integers(spec.t_range[0], spec.t_range[1] + 1))
        features = (spec.background_std
                    * rng.standard_normal((t, spec.d_in))).astype(np.float32)
        n_inst = int(rng.integers(1, spec.max_instances + 1))
        lengths = [int(rng.integers(spec.len_range[0], spec.len_range[1] + 1))
                   for _ in range(n_inst)]

        video_id = f"vid_{v:0{width}d}"
        segments = []
        for s, length in _place_instances(rng, t, lengths):
            if not class_cycle:
                class_cycle = list(spec.class_names)
                master.shuffle(class_cycle)
            name = class_cycle.pop()
            chunks = np.array_split(np.arange(s, s + length), 3)
            for phase, chunk in zip(_TEMPORAL, chunks):
                block = prototypes[name][phase] + spec.noise_std * rng.standard_normal(
                    (len(chunk), spec.d_in))
                features[chunk] = block.astype(np.float32)
            segments.append(Segment(
                start_sec=float(s * spec.snippet_stride / spec.frame_rate),
                end_sec=float((s + length - 1) * spec.snippet_stride / spec.frame_rate),
                label=name))

        feature_path = f"features/{video_id}.feat"
        write_features(FeatureSequence(features=features,
                                       snippet_stride=spec.snippet_stride,
                                       video_id=video_id),
                       out_dir / feature_path)
        videos.append(VideoInfo(
            video_id=video_id, feature_path=feature_path,
            duration_seconds=float(t * spec.snippet_stride / spec.frame_rate),
            frame_rate=spec.frame_rate, snippet_stride=spec.snippet_stride))
        annotations[video_id] = sorted(segments, key=lambda s: s.start_sec)

    manifest = DatasetManifest(videos=videos, annotations=annotations,
                               vocabulary=spec.class_names, root=out_dir)
    manifest_path = out_dir / "manifest.json"
    manifest.save(manifest_path)

    descriptions_path = out_dir / "descriptions.json"
    write_description_file(descriptions_path, descriptions)

    overrides_path = out_dir / "encoder_overrides.json"
    overrides_path.write_text(
        json.dumps({k: [float(x) for x in overrides[k]] for k in sorted(overrides)},
                   indent=2) + "\n", encoding="utf-8")

    return SyntheticDataset(manifest=manifest, manifest_path=manifest_path,
                            descriptions_path=descriptions_path,
                            overrides_path=overrides_path, prototypes=prototypes)
