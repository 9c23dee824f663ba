"""Command-line interface for the full pipeline.

Subcommands cover synthetic data generation, label decomposition, text
encoding, class splits, training, inference, evaluation and the alignment
ablation.  Exit codes: 0 success, 2 configuration problems, 3 data problems,
4 numeric divergence during training.
"""

from __future__ import annotations

import dataclasses
import functools
import json
from pathlib import Path

import click

from .config import (
    AlignmentMode,
    ModelConfig,
    TrainConfig,
    load_config_file,
)
from .data import DatasetManifest, OpenVocabSplit, make_splits
from .errors import PhaseTadError
from .metrics import EvalConfig, mean_ap
from .phases import Phase, phase_set
from .postprocess import read_detections, write_detections
from .semantics import (
    DescriptionCache,
    DescriptionLibrary,
    HashedTextEncoder,
    HttpLlmClient,
    ScriptedLlmClient,
    decompose_label,
    wrap_description,
    write_description_file,
)
from .synthetic import SyntheticSpec, generate_synthetic
from .training import Checkpoint, detect as run_detect, run_ablation, train as run_train

_ABLATION_VARIANTS = ("global_label", "global_merge", "phase_average",
                      "phase_adaptive", "adaptive_1phase")


def _guard(fn):
    """Map package errors to their exit codes with a one-line message."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PhaseTadError as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(getattr(exc, "exit_code", 1)) from exc
        except ValueError as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(2) from exc

    return wrapper


def _encoder(dim: int, seed: int, overrides: str | None) -> HashedTextEncoder:
    if overrides:
        return HashedTextEncoder.from_overrides_file(overrides, seed=seed)
    return HashedTextEncoder(dim=dim, seed=seed)


def _encoder_options(fn):
    fn = click.option("--encoder-dim", type=int, default=32, show_default=True,
                      help="Text embedding width (ignored with overrides).")(fn)
    fn = click.option("--encoder-seed", type=int, default=0, show_default=True,
                      help="Seed of the hashed text encoder.")(fn)
    fn = click.option("--encoder-overrides", type=click.Path(exists=True, dir_okay=False),
                      default=None, help="JSON file of exact-text embedding overrides.")(fn)
    return fn


def _merge_config(section: dict, **overrides) -> dict:
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _load_sections(config_path: str | None) -> tuple[dict, dict]:
    if not config_path:
        return {}, {}
    obj = load_config_file(config_path)
    return dict(obj.get("model", {})), dict(obj.get("train", {}))


def _read_split(path: str, index: int) -> OpenVocabSplit:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    for entry in obj["splits"]:
        if entry["index"] == index:
            return OpenVocabSplit(seed=obj["master_seed"], seen=entry["seen"],
                                  unseen=entry["unseen"],
                                  fraction_seen=obj["fraction_seen"], index=index)
    raise click.UsageError(f"split file {path} has no split with index {index}")


def _classes_arg(classes: str | None, split_file: str | None, split_index: int,
                 subset: str) -> list[str]:
    if classes:
        return [c.strip() for c in classes.split(",") if c.strip()]
    if split_file:
        split = _read_split(split_file, split_index)
        return split.seen if subset == "seen" else split.unseen
    raise click.UsageError("provide --classes or --split-file")


@click.group()
@click.version_option(package_name="phasetad")
def main():
    """Open-vocabulary temporal action detection via phase decomposition."""


def _parse_pool_size(text: str | None) -> int | tuple[int, ...] | None:
    if text is None:
        return None
    parts = [int(p) for p in text.split(",") if p.strip()]
    return parts[0] if len(parts) == 1 else tuple(parts)


def _normalize_synth_fields(fields: dict) -> dict:
    for key in ("t_range", "len_range"):
        if key in fields:
            fields[key] = tuple(fields[key])
    if isinstance(fields.get("phase_pool_size"), list):
        fields["phase_pool_size"] = tuple(fields["phase_pool_size"])
    if "summary_phases" in fields and not all(
            isinstance(p, Phase) for p in fields["summary_phases"]):
        fields["summary_phases"] = tuple(Phase(p) for p in fields["summary_phases"])
    return fields


@main.command()
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, required=True, help="Generator seed (required).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file of generator fields.")
@click.option("--classes", "n_classes", type=int, default=None)
@click.option("--videos", "n_videos", type=int, default=None)
@click.option("--d-in", type=int, default=None)
@click.option("--max-instances", type=int, default=None)
@click.option("--pool-size", "pool_size_arg", default=None,
              help='Primitive pool size per phase: one int or "start,middle,end".')
@click.option("--reversed-pairs", "reversed_class_pairs", type=int, default=None)
@click.option("--shared-pairs", "shared_phase_pairs", type=int, default=None)
@click.option("--shared-phases-per-pair", type=int, default=None)
@click.option("--summary-phases", "summary_phases_arg", default=None,
              help='Phases the whole-action summary covers, e.g. "start,middle".')
@click.option("--noise-std", type=float, default=None)
@click.option("--background-std", type=float, default=None)
@click.option("--text-noise-std", type=float, default=None)
@click.option("--summary-noise-std", type=float, default=None)
@_guard
def synth(out, seed, config_path, pool_size_arg, summary_phases_arg, **overrides):
    """Generate a synthetic phase-structured dataset."""
    base = load_config_file(config_path) if config_path else {}
    fields = _merge_config(base, seed=seed,
                           phase_pool_size=_parse_pool_size(pool_size_arg),
                           **overrides)
    if summary_phases_arg:
        fields["summary_phases"] = [p.strip() for p in summary_phases_arg.split(",")
                                    if p.strip()]
    spec = SyntheticSpec(**_normalize_synth_fields(fields))
    dataset = generate_synthetic(spec, out)
    click.echo(f"wrote manifest {dataset.manifest_path}")
    click.echo(f"wrote descriptions {dataset.descriptions_path}")
    click.echo(f"wrote encoder overrides {dataset.overrides_path}")
    click.echo(f"{len(dataset.manifest.videos)} videos, "
               f"{sum(len(s) for s in dataset.manifest.annotations.values())} segments, "
               f"{len(dataset.manifest.vocabulary)} classes")


@main.command()
@click.option("--classes", default=None, help="Comma-separated action labels.")
@click.option("--classes-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="File with one action label per line.")
@click.option("--phases", "n_phases", type=int, default=4, show_default=True)
@click.option("--cache-dir", type=click.Path(file_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--provider", default="openai", show_default=True)
@click.option("--model", default="gpt-3.5-turbo", show_default=True)
@click.option("--base-url", default="https://api.openai.com/v1", show_default=True)
@click.option("--api-key-env", default="OPENAI_API_KEY", show_default=True,
              help="Environment variable holding the API key.")
@click.option("--canned", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON prompt->response map; replaces the network backend.")
@_guard
def decompose(classes, classes_file, n_phases, cache_dir, out, provider, model,
              base_url, api_key_env, canned):
    """Decompose action labels into per-phase descriptions via an LLM."""
    if classes:
        labels = [c.strip() for c in classes.split(",") if c.strip()]
    elif classes_file:
        labels = [line.strip() for line in Path(classes_file).read_text(
            encoding="utf-8").splitlines() if line.strip()]
    else:
        raise click.UsageError("provide --classes or --classes-file")
    if canned:
        responses = json.loads(Path(canned).read_text(encoding="utf-8"))
        client = ScriptedLlmClient(responses, provider=provider, model=model)
    else:
        client = HttpLlmClient(model=model, base_url=base_url, provider=provider,
                               api_key_env=api_key_env)
    cache = DescriptionCache(cache_dir)
    sets = {}
    for label in labels:
        sets[label] = decompose_label(label, client, cache,
                                      phases=phase_set(n_phases))
        click.echo(f"decomposed {label}")
    write_description_file(out, sets)
    click.echo(f"wrote {len(sets)} description sets to {out}")


@main.command()
@click.option("--descriptions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_encoder_options
@_guard
def encode(descriptions, out, encoder_dim, encoder_seed, encoder_overrides):
    """Encode wrapped phase descriptions to raw text embeddings (JSON)."""
    library = DescriptionLibrary.from_file(descriptions)
    enc = _encoder(encoder_dim, encoder_seed, encoder_overrides)
    payload = {}
    for name in library.classes():
        pds = library.get(name)
        payload[name] = {
            phase.value: [float(x) for x in enc.encode(wrap_description(text))]
            for phase, text in sorted(pds.descriptions.items())}
    Path(out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    click.echo(f"encoded {len(payload)} classes at width {enc.dim} to {out}")


@main.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--fraction-seen", type=float, default=0.5, show_default=True)
@click.option("--n-splits", type=int, default=1, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guard
def split(manifest, fraction_seen, n_splits, seed, out):
    """Create seeded seen/unseen class splits of a dataset vocabulary."""
    vocab = DatasetManifest.load(manifest).vocabulary
    splits = make_splits(vocab, fraction_seen, n_splits, seed)
    payload = {
        "master_seed": seed,
        "fraction_seen": fraction_seen,
        "splits": [{"index": s.index, "seen": s.seen, "unseen": s.unseen}
                   for s in splits],
    }
    Path(out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    click.echo(f"wrote {n_splits} splits ({len(splits[0].seen)} seen / "
               f"{len(splits[0].unseen)} unseen classes) to {out}")


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--descriptions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", type=int, required=True, help="Training seed (required).")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help='JSON file with "model" and "train" sections.')
@click.option("--split-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--split-index", type=int, default=0, show_default=True)
@click.option("--seen", "seen_arg", default=None,
              help="Comma-separated seen classes (alternative to --split-file).")
@click.option("--alignment", type=click.Choice([m.value for m in AlignmentMode]),
              default=None)
@click.option("--phases", "n_phases", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@_encoder_options
@_guard
def train(manifest_path, descriptions, seed, out_dir, config_path, split_file,
          split_index, seen_arg, alignment, n_phases, epochs, lr,
          encoder_dim, encoder_seed, encoder_overrides):
    """Train a detector on the seen classes of a dataset."""
    manifest = DatasetManifest.load(manifest_path)
    library = DescriptionLibrary.from_file(descriptions)
    encoder = _encoder(encoder_dim, encoder_seed, encoder_overrides)
    seen = _classes_arg(seen_arg, split_file, split_index, "seen")
    model_section, train_section = _load_sections(config_path)
    model_cfg = ModelConfig.from_json_obj(_merge_config(
        model_section, alignment=alignment, n_phases=n_phases,
        d_in=model_section.get("d_in"), text_dim=model_section.get("text_dim")))
    if "d_in" not in model_section:
        model_cfg = dataclasses.replace(
            model_cfg, d_in=manifest.load_features(manifest.videos[0]).features.shape[1])
    if "text_dim" not in model_section:
        model_cfg = dataclasses.replace(model_cfg, text_dim=encoder.dim)
    train_cfg = TrainConfig.from_json_obj(_merge_config(
        train_section, seed=seed, epochs=epochs, lr=lr))
    result = run_train(manifest, seen, library, encoder, model_cfg, train_cfg,
                       out_dir=out_dir)
    final = result.loss_history[-1]
    click.echo(f"trained {train_cfg.epochs} epochs on {len(seen)} classes, "
               f"final loss {final['loss_total']:.4f}")
    click.echo(f"wrote checkpoint {result.checkpoint_path}")


@main.command()
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--descriptions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--classes", default=None, help="Comma-separated inference vocabulary.")
@click.option("--split-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--split-index", type=int, default=0, show_default=True)
@click.option("--subset", type=click.Choice(["seen", "unseen"]), default="unseen",
              show_default=True, help="Which side of the split to detect.")
@click.option("--video-ids", default=None, help="Comma-separated subset of videos.")
@click.option("--score-floor", type=float, default=0.01, show_default=True)
@click.option("--top-k", type=int, default=200, show_default=True)
@click.option("--nms-sigma", type=float, default=0.5, show_default=True)
@click.option("--nms-prune", type=float, default=1e-3, show_default=True)
@_encoder_options
@_guard
def detect(checkpoint_path, manifest_path, descriptions, out, classes, split_file,
           split_index, subset, video_ids, score_floor, top_k, nms_sigma, nms_prune,
           encoder_dim, encoder_seed, encoder_overrides):
    """Detect actions of a (possibly unseen) vocabulary with a trained model."""
    manifest = DatasetManifest.load(manifest_path)
    library = DescriptionLibrary.from_file(descriptions)
    encoder = _encoder(encoder_dim, encoder_seed, encoder_overrides)
    vocab = _classes_arg(classes, split_file, split_index, subset)
    model = Checkpoint.load(checkpoint_path).build_model()
    if video_ids:
        ids = [v.strip() for v in video_ids.split(",") if v.strip()]
    else:
        ids = [v.video_id for v in manifest.videos]
    detections = run_detect(model, manifest, ids, vocab, library, encoder,
                            score_floor=score_floor, top_k=top_k,
                            sigma=nms_sigma, prune_below=nms_prune)
    write_detections(out, detections)
    click.echo(f"wrote {len(detections)} detections for {len(vocab)} classes to {out}")


@main.command(name="eval")
@click.option("--detections", "detections_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--classes", default=None, help="Comma-separated classes to evaluate.")
@click.option("--split-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--split-index", type=int, default=0, show_default=True)
@click.option("--subset", type=click.Choice(["seen", "unseen"]), default="unseen",
              show_default=True)
@click.option("--preset", type=click.Choice(["thumos", "activitynet"]), default=None,
              help="Named tIoU threshold preset.")
@click.option("--thresholds", default=None, help="Comma-separated tIoU thresholds.")
@click.option("--out-json", type=click.Path(dir_okay=False), default=None)
@click.option("--out-csv", type=click.Path(dir_okay=False), default=None)
@_guard
def evaluate(detections_path, manifest_path, classes, split_file, split_index,
             subset, preset, thresholds, out_json, out_csv):
    """Score a detection file against a dataset's ground truth."""
    manifest = DatasetManifest.load(manifest_path)
    vocab = _classes_arg(classes, split_file, split_index, subset)
    if preset and thresholds:
        raise click.UsageError("give either --preset or --thresholds, not both")
    if preset:
        eval_cfg = EvalConfig.preset(preset)
    elif thresholds:
        eval_cfg = EvalConfig(tuple(float(t) for t in thresholds.split(",")))
    else:
        eval_cfg = EvalConfig()
    detections = read_detections(detections_path)
    result = mean_ap(detections, manifest.annotations, vocab, eval_cfg)
    for thr in result.thresholds:
        click.echo(f"mAP@{thr:.2f} = {result.map_per_threshold[thr]:.4f}")
    click.echo(f"average mAP = {result.average_map:.4f}")
    if result.skipped_classes:
        click.echo(f"skipped (no ground truth): {', '.join(result.skipped_classes)}")
    if out_json:
        result.save_json(out_json)
    if out_csv:
        result.save_csv(out_csv)


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--descriptions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--seeds", default="0,1,2,3,4", show_default=True)
@click.option("--fraction-seen", type=float, default=0.5, show_default=True)
@click.option("--variants", default=",".join(_ABLATION_VARIANTS), show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help='JSON file with "model" and "train" sections.')
@click.option("--epochs", type=int, default=None)
@click.option("--plot", is_flag=True, help="Also write a bar chart (needs matplotlib).")
@_encoder_options
@_guard
def ablate(manifest_path, descriptions, out_dir, seeds, fraction_seen, variants,
           config_path, epochs, plot, encoder_dim, encoder_seed, encoder_overrides):
    """Compare alignment variants across seeds on one dataset."""
    manifest = DatasetManifest.load(manifest_path)
    library = DescriptionLibrary.from_file(descriptions)
    encoder = _encoder(encoder_dim, encoder_seed, encoder_overrides)
    model_section, train_section = _load_sections(config_path)
    if "d_in" not in model_section:
        model_section["d_in"] = manifest.load_features(manifest.videos[0]).features.shape[1]
    if "text_dim" not in model_section:
        model_section["text_dim"] = encoder.dim
    base_cfg = ModelConfig.from_json_obj(model_section)
    train_cfg = TrainConfig.from_json_obj(_merge_config(train_section, seed=0,
                                                        epochs=epochs))
    variant_cfgs = {name: ablation_variant(base_cfg, name)
                    for name in (v.strip() for v in variants.split(",")) if name}
    seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    result = run_ablation(manifest, library, encoder, variant_cfgs, train_cfg,
                          seed_list, fraction_seen=fraction_seen)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.save_csv(out_dir / "ablation.csv")
    for name, (mean, std) in result.summary().items():
        click.echo(f"{name}: average mAP {mean:.4f} +/- {std:.4f}")
    click.echo(f"wrote {out_dir / 'ablation.csv'}")
    if plot:
        result.save_plot(out_dir / "ablation.png")
        click.echo(f"wrote {out_dir / 'ablation.png'}")


def ablation_variant(base: ModelConfig, name: str) -> ModelConfig:
    """Model config for a named ablation variant, derived from a base config."""
    if name == "adaptive_1phase":
        return dataclasses.replace(base, alignment=AlignmentMode.PHASE_ADAPTIVE,
                                   n_phases=1)
    try:
        return dataclasses.replace(base, alignment=AlignmentMode(name))
    except ValueError:
        raise click.UsageError(
            f"unknown variant {name!r}; choose from {', '.join(_ABLATION_VARIANTS)}"
        ) from None


if __name__ == "__main__":
    main()
