"""Training, checkpointing, inference and the transfer ablation driver.

Training sees only videos whose every annotation belongs to the seen-class
vocabulary; class-text banks are rebuilt each step so the text projections
train end to end.  Open-vocabulary inference rebuilds banks for the test
vocabulary, which may be disjoint from training.
"""

from __future__ import annotations

import csv
import math
import random
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import torch

from .config import ModelConfig, ScheduleKind, TrainConfig
from .data import DatasetManifest, OpenVocabSplit, make_splits, seconds_to_snippets
from .detector import PhaseDetector
from .errors import DataError, DivergenceError
from .losses import (
    SupervisionTargets,
    classification_loss,
    foreground_loss,
    localization_loss,
    make_supervision_targets,
    total_loss,
)
from .metrics import EvalConfig, EvalResult, mean_ap
from .postprocess import Detection, assemble_proposals, suppress
from .semantics import DescriptionLibrary, TextEncoder


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for a 0-indexed epoch: linear warmup, then decay."""
    warmup = cfg.effective_warmup
    if epoch < warmup:
        return cfg.lr * (epoch + 1) / warmup
    if cfg.schedule is ScheduleKind.MULTISTEP:
        milestones = [int(m * cfg.epochs) for m in cfg.milestones]
        passed = sum(epoch >= m for m in milestones)
        return cfg.lr * cfg.gamma ** passed
    progress = (epoch - warmup) / max(1, cfg.epochs - warmup)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class Checkpoint:
    """Self-contained training snapshot; loading rebuilds the exact model."""

    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int
    state_dict: dict
    loss_history: list[dict] = field(default_factory=list)
    torch_rng_state: torch.Tensor | None = None

    def save(self, path: str | Path) -> None:
        torch.save({
            "model_config": self.model_config.to_json_obj(),
            "train_config": self.train_config.to_json_obj(),
            "epoch": self.epoch,
            "state_dict": self.state_dict,
            "loss_history": self.loss_history,
            "torch_rng_state": self.torch_rng_state,
        }, path)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        obj = torch.load(path, map_location="cpu", weights_only=True)
        return cls(model_config=ModelConfig.from_json_obj(obj["model_config"]),
                   train_config=TrainConfig.from_json_obj(obj["train_config"]),
                   epoch=obj["epoch"], state_dict=obj["state_dict"],
                   loss_history=obj["loss_history"],
                   torch_rng_state=obj["torch_rng_state"])

    def build_model(self) -> PhaseDetector:
        model = PhaseDetector(self.model_config)
        model.load_state_dict(self.state_dict)
        return model


@dataclass
class TrainResult:
    model: PhaseDetector
    seen_classes: list[str]
    loss_history: list[dict]
    checkpoint_path: Path | None = None


def _training_items(manifest: DatasetManifest, vocab: Sequence[str],
                    dtype: torch.dtype = torch.float32):
    """(features, supervision) for every video annotated with seen classes only."""
    class_index = {name: i for i, name in enumerate(vocab)}
    items = []
    for video in sorted(manifest.videos, key=lambda v: v.video_id):
        segments = manifest.annotations.get(video.video_id, [])
        if not segments or not all(s.label in class_index for s in segments):
            continue
        seq = manifest.load_features(video)
        coords = [(seconds_to_snippets(s.start_sec, video.snippet_stride, video.frame_rate),
                   seconds_to_snippets(s.end_sec, video.snippet_stride, video.frame_rate),
                   class_index[s.label]) for s in segments]
        targets = make_supervision_targets(coords, seq.num_snippets, len(vocab),
                                           dtype=dtype)
        items.append((torch.from_numpy(seq.features).to(dtype), targets))
    if not items:
        raise DataError("no training videos: every video has out-of-vocabulary labels")
    return items


def _losses_for(model: PhaseDetector, features: torch.Tensor,
                targets: SupervisionTargets, vocab: Sequence[str],
                library: DescriptionLibrary, encoder: TextEncoder,
                weights: tuple[float, float, float]):
    banks = model.build_banks(vocab, library, encoder)
    out = model(features, banks)
    l_cls = classification_loss(out.class_scores, targets)
    l_fg = foreground_loss(out.localization.fg_prob, targets.fg_target)
    l_loc = localization_loss(out.localization, targets)
    return total_loss(l_cls, l_fg, l_loc, weights), (l_cls, l_fg, l_loc)


def train(manifest: DatasetManifest, seen_classes: Sequence[str],
          library: DescriptionLibrary, encoder: TextEncoder,
          model_cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir: str | Path | None = None) -> TrainResult:
    """Train a detector on the seen portion of the dataset.

    Fully deterministic for a fixed configuration and seed: model init,
    epoch shuffling and every update derive from ``train_cfg.seed``.
    """
    vocab = sorted(seen_classes)
    unknown = set(vocab) - set(manifest.vocabulary)
    if not vocab:
        raise DataError("seen class list is empty")
    if unknown:
        raise DataError(f"seen classes missing from the dataset vocabulary: {sorted(unknown)}")

    torch.manual_seed(train_cfg.seed)
    model = PhaseDetector(model_cfg)
    items = _training_items(manifest, vocab)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr,
                                 weight_decay=train_cfg.weight_decay)
    shuffler = random.Random(train_cfg.seed)

    history: list[dict] = []
    for epoch in range(train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = list(range(len(items)))
        shuffler.shuffle(order)
        sums = {"loss_cls": 0.0, "loss_fg": 0.0, "loss_loc": 0.0, "loss_total": 0.0}
        for step, idx in enumerate(order):
            features, targets = items[idx]
            loss, parts = _losses_for(model, features, targets, vocab, library,
                                      encoder, train_cfg.loss_weights)
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise DivergenceError(f"non-finite loss {loss_value}",
                                      epoch=epoch, step=step)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            optimizer.step()
            for key, val in zip(("loss_cls", "loss_fg", "loss_loc"), parts):
                sums[key] += float(val.detach())
            sums["loss_total"] += loss_value
        record = {"epoch": epoch, "lr": lr}
        record.update({k: v / len(items) for k, v in sums.items()})
        history.append(record)

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "loss_history.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(history[0]))
            writer.writeheader()
            writer.writerows(history)
        checkpoint_path = out_dir / "checkpoint.pt"
        Checkpoint(model_config=model_cfg, train_config=train_cfg,
                   epoch=train_cfg.epochs - 1, state_dict=model.state_dict(),
                   loss_history=history,
                   torch_rng_state=torch.get_rng_state()).save(checkpoint_path)

    return TrainResult(model=model, seen_classes=vocab, loss_history=history,
                       checkpoint_path=checkpoint_path)


def detect(model: PhaseDetector, manifest: DatasetManifest,
           video_ids: Sequence[str], vocabulary: Sequence[str],
           library: DescriptionLibrary, encoder: TextEncoder, *,
           score_floor: float = 0.01, top_k: int = 200, sigma: float = 0.5,
           prune_below: float = 1e-3) -> list[Detection]:
    """Run open-vocabulary inference over the given videos and vocabulary."""
    model.eval()
    detections: list[Detection] = []
    with torch.no_grad():
        banks = model.build_banks(list(vocabulary), library, encoder)
        for video_id in video_ids:
            video = manifest.video(video_id)
            seq = manifest.load_features(video)
            out = model(torch.from_numpy(seq.features).float(), banks)
            detections.extend(assemble_proposals(
                out.class_scores, out.localization, video, list(vocabulary),
                score_floor=score_floor, top_k=top_k))
    return suppress(detections, sigma=sigma, prune_below=prune_below)


def evaluate_transfer(manifest: DatasetManifest, library: DescriptionLibrary,
                      encoder: TextEncoder, model_cfg: ModelConfig,
                      train_cfg: TrainConfig, split: OpenVocabSplit,
                      eval_cfg: EvalConfig = EvalConfig(), *,
                      score_floor: float = 0.01, top_k: int = 200,
                      out_dir: str | Path | None = None
                      ) -> tuple[EvalResult, TrainResult]:
    """Train on seen classes, evaluate detection of unseen classes.

    Test videos are those containing at least one unseen-class segment; the
    detector is given only the unseen vocabulary at inference time.
    """
    result = train(manifest, split.seen, library, encoder, model_cfg, train_cfg,
                   out_dir=out_dir)
    unseen = set(split.unseen)
    test_videos = [v.video_id for v in manifest.videos
                   if any(s.label in unseen for s in manifest.annotations.get(v.video_id, []))]
    if not test_videos:
        raise DataError("no test videos contain unseen-class segments")
    detections = detect(result.model, manifest, test_videos, split.unseen,
                        library, encoder, score_floor=score_floor, top_k=top_k)
    test_annotations = {vid: [s for s in manifest.annotations.get(vid, [])
                              if s.label in unseen] for vid in test_videos}
    evaluation = mean_ap(detections, test_annotations, split.unseen, eval_cfg)
    return evaluation, result


@dataclass
class AblationRow:
    variant: str
    seed: int
    average_map: float


@dataclass
class AblationResult:
    rows: list[AblationRow]

    def per_variant(self) -> dict[str, list[float]]:
        out: dict[str, list[float]] = {}
        for row in self.rows:
            out.setdefault(row.variant, []).append(row.average_map)
        return out

    def summary(self) -> dict[str, tuple[float, float]]:
        """variant -> (mean, sample std) of average mAP over seeds."""
        return {name: (statistics.fmean(vals),
                       statistics.stdev(vals) if len(vals) > 1 else 0.0)
                for name, vals in self.per_variant().items()}

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "seed", "average_map"])
            for row in self.rows:
                writer.writerow([row.variant, row.seed, f"{row.average_map:.6f}"])
            writer.writerow([])
            writer.writerow(["variant", "mean_average_map", "std_average_map"])
            for name, (mean, std) in self.summary().items():
                writer.writerow([name, f"{mean:.6f}", f"{std:.6f}"])

    def save_plot(self, path: str | Path) -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        summary = self.summary()
        names = list(summary)
        means = [summary[n][0] for n in names]
        stds = [summary[n][1] for n in names]
        fig, ax = plt.subplots(figsize=(1.8 * len(names) + 2, 4))
        ax.bar(range(len(names)), means, yerr=stds, capsize=4)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylabel("average mAP over unseen classes")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def run_ablation(manifest: DatasetManifest, library: DescriptionLibrary,
                 encoder: TextEncoder, variants: Mapping[str, ModelConfig],
                 train_cfg: TrainConfig, seeds: Sequence[int],
                 fraction_seen: float = 0.5,
                 eval_cfg: EvalConfig = EvalConfig()) -> AblationResult:
    """Evaluate each model variant across seeds with matched class splits.

    For a given seed every variant sees the identical seen/unseen split and
    the identical training seed, so differences are attributable to the
    variant alone.
    """
    rows = []
    for seed in seeds:
        split = make_splits(manifest.vocabulary, fraction_seen, 1, seed)[0]
        for name, model_cfg in variants.items():
            evaluation, _ = evaluate_transfer(
                manifest, library, encoder, model_cfg,
                replace(train_cfg, seed=seed), split, eval_cfg)
            rows.append(AblationRow(variant=name, seed=seed,
                                    average_map=evaluation.average_map))
    return AblationResult(rows=rows)
