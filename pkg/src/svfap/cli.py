"""Command-line entry point.

Subcommands: synth, pretrain, finetune, eval, count, reconstruct. Model and
training settings start from a named preset, are overridden by an optional
``--config`` file of ``key = value`` lines, and finally by repeated
``--set key=value`` flags (last writer wins). Every subcommand that takes an
``--out`` directory writes a provenance record ``run.json`` there and never
touches files outside it.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from . import complexity
from .config import ArchConfig, TrainConfig, apply_assignments, deserialize, \
    finetune_defaults, preset, pretrain_defaults, serialize, validate
from .data import ClipDataset, SynthSpec, crop_face_region, synth_generate, \
    write_ppm
from .decoder import reconstruction_loss
from .encoder import DOWNSAMPLE_MODES
from .masking import make_tube_mask
from .tokenizer import patchify, unpatchify
from .trainer import FinetunePredictor, MaskedAutoencoder, clip_to_patches, \
    configure_determinism, evaluate, load_checkpoint, run_finetune, \
    run_pretrain


def git_describe() -> str:
    """Best-effort source revision string; 'unknown' outside a checkout."""
    try:
        proc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
            cwd=Path(__file__).resolve().parent)
        if proc.returncode == 0 and proc.stdout.strip():
            return proc.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_run_record(out_dir, command: str, config: Dict,
                     seed: Optional[int], metrics: Dict) -> Path:
    record = {
        "command": command,
        "argv": sys.argv[1:],
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "git": git_describe(),
        "seed": seed,
        "config": config,
        "metrics": metrics,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", default="TPSBT-B",
                        help="architecture preset name (TPSBT-S or TPSBT-B)")
    parser.add_argument("--config", default=None,
                        help="file of 'key = value' overrides")
    parser.add_argument("--set", action="append", default=[], metavar="K=V",
                        dest="overrides", help="single override, repeatable; "
                        "applied after --config")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--variant", default="full",
                        choices=complexity.VARIANTS,
                        help="encoder variant")
    parser.add_argument("--downsample", default="conv",
                        choices=DOWNSAMPLE_MODES,
                        help="temporal downsampling operator")


def assemble_config(args, regime: str) -> Tuple[ArchConfig, TrainConfig]:
    """preset -> --config file -> --set flags, validated at the end."""
    arch = preset(args.preset)
    train = pretrain_defaults() if regime == "pretrain" else finetune_defaults()
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        arch, train = deserialize(path.read_text(), arch, train)
    if args.overrides:
        arch, train = apply_assignments(arch, train, args.overrides)
    validate(arch)
    validate(train)
    return arch, train


def _config_snapshot(arch: ArchConfig, train: Optional[TrainConfig] = None,
                     **extra) -> Dict:
    snapshot: Dict = dict(asdict(arch))
    if train is not None:
        snapshot.update(asdict(train))
    snapshot.update(extra)
    return snapshot


def cmd_synth(args) -> int:
    spec = SynthSpec(num_classes=args.classes, clips_per_class=args.per_class,
                     frames=args.frames, height=args.height, width=args.width,
                     noise_std=args.noise, seed=args.seed)
    manifest = synth_generate(spec, args.out)
    print(f"wrote {len(manifest)} clips ({args.classes} classes x "
          f"{args.per_class}) under {args.out}")
    write_run_record(args.out, "synth", asdict(spec), spec.seed,
                     {"clips": len(manifest), "classes": args.classes})
    return 0


def cmd_count(args) -> int:
    arch, _ = assemble_config(args, regime="finetune")
    lines: List[str] = []
    if args.table4:
        grid = complexity.variant_grid(arch, head_classes=args.classes)
        header = (f"{'variant':<14}{'params-FT':>12}{'FLOPs-FT':>12}"
                  f"{'FLOPs-PT':>12}")
        lines += [header, "-" * len(header)]
        for name, report in grid.items():
            lines.append(
                f"{name:<14}"
                f"{complexity.format_count(report.params_finetune_total):>12}"
                f"{complexity.format_count(report.flops_finetune_total):>12}"
                f"{complexity.format_count(report.flops_pretrain_total):>12}")
        cuts = complexity.reduction(grid["full"], grid["vit_baseline"])
        lines.append(f"reduction vs vit_baseline: "
                     f"finetune FLOPs {cuts['flops_finetune']:.1f}%, "
                     f"pretrain FLOPs {cuts['flops_pretrain']:.1f}%")
    report = complexity.count(arch, args.variant, head_classes=args.classes)
    if not args.table4 or args.out is not None:
        lines.append(complexity.format_report(report))
    summary = {
        "params_finetune": report.params_finetune_total,
        "params_pretrain": report.params_pretrain_total,
        "flops_finetune": report.flops_finetune_total,
        "flops_pretrain": report.flops_pretrain_total,
    }
    if args.regime in ("finetune", "both"):
        lines.append(f"finetune: params "
                     f"{complexity.format_count(summary['params_finetune'])}, "
                     f"FLOPs "
                     f"{complexity.format_count(summary['flops_finetune'])}")
    if args.regime in ("pretrain", "both"):
        lines.append(f"pretrain: params "
                     f"{complexity.format_count(summary['params_pretrain'])}, "
                     f"FLOPs "
                     f"{complexity.format_count(summary['flops_pretrain'])}")
    print("\n".join(lines))
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "counts.csv", "w") as fh:
            fh.write("section,part,count\n")
            for section, part, value in complexity.report_rows(report):
                fh.write(f"{section},{part},{value}\n")
        write_run_record(out, "count",
                         _config_snapshot(arch, variant=args.variant,
                                          head_classes=args.classes),
                         None, summary)
    return 0


def cmd_pretrain(args) -> int:
    arch, train = assemble_config(args, regime="pretrain")
    dataset = ClipDataset(args.data, clip_len=arch.input[0],
                          stride=args.stride)
    model = MaskedAutoencoder(arch, variant=args.variant,
                              downsample=args.downsample)
    log = run_pretrain(model, dataset, arch, train, out_dir=args.out,
                       resume_from=args.resume)
    metrics = {"initial_loss": log.epoch_losses[0],
               "final_loss": log.final_loss,
               "epochs": len(log.epoch_losses)}
    print(f"pretraining done: loss {metrics['initial_loss']:.6f} -> "
          f"{metrics['final_loss']:.6f} over {metrics['epochs']} epochs")
    write_run_record(args.out, "pretrain",
                     _config_snapshot(arch, train, variant=args.variant,
                                      downsample=args.downsample),
                     train.seed, metrics)
    return 0


def _load_encoder_weights(model: FinetunePredictor, ckpt_path) -> Tuple[int, int]:
    """Copy encoder tensors from a checkpoint by module path.

    Returns (loaded, fresh) tensor counts; tensors missing from the checkpoint
    or with mismatched shapes keep their fresh initialization.
    """
    payload = load_checkpoint(ckpt_path)
    prefix = "encoder."
    source = {k[len(prefix):]: v for k, v in payload["model"].items()
              if k.startswith(prefix)}
    target = model.encoder.state_dict()
    usable = {k: v for k, v in source.items()
              if k in target and v.shape == target[k].shape}
    model.encoder.load_state_dict(usable, strict=False)
    return len(usable), len(target) - len(usable)


def cmd_finetune(args) -> int:
    arch, train = assemble_config(args, regime="finetune")
    dataset = ClipDataset(args.data, clip_len=arch.input[0],
                          stride=args.stride)
    if args.task == "class":
        num_outputs = dataset.num_classes
    else:
        first = dataset.label(0)
        if first is None:
            raise ValueError("manifest rows carry no score labels")
        num_outputs = int(np.atleast_1d(first).shape[0])
    model = FinetunePredictor(arch, num_outputs, variant=args.variant,
                              downsample=args.downsample)
    if args.init is not None:
        loaded, fresh = _load_encoder_weights(model, args.init)
        print(f"encoder init from {args.init}: {loaded} tensors loaded, "
              f"{fresh} freshly initialized")
    log = run_finetune(model, dataset, arch, train, task=args.task,
                       out_dir=args.out)
    metrics = {"initial_loss": log.epoch_losses[0],
               "final_loss": log.final_loss,
               "epochs": len(log.epoch_losses)}
    print(f"finetuning done: loss {metrics['initial_loss']:.6f} -> "
          f"{metrics['final_loss']:.6f} over {metrics['epochs']} epochs")
    write_run_record(args.out, "finetune",
                     _config_snapshot(arch, train, variant=args.variant,
                                      downsample=args.downsample,
                                      task=args.task),
                     train.seed, metrics)
    return 0


def _rebuild_from_checkpoint(ckpt_path, variant: str, downsample: str):
    """Recover configs and a weighted finetune model from a checkpoint."""
    payload = load_checkpoint(ckpt_path)
    arch, train = deserialize(payload["config"])
    if arch is None or train is None:
        raise ValueError("checkpoint config snapshot is incomplete")
    head_key = "head.fc.weight"
    if head_key not in payload["model"]:
        raise ValueError("checkpoint does not contain a prediction head; "
                         "was it written by finetuning?")
    num_outputs = payload["model"][head_key].shape[0]
    model = FinetunePredictor(arch, num_outputs, variant=variant,
                              downsample=downsample)
    model.load_state_dict(payload["model"])
    return arch, train, model


def cmd_eval(args) -> int:
    arch, train, model = _rebuild_from_checkpoint(args.checkpoint,
                                                  args.variant,
                                                  args.downsample)
    dataset = ClipDataset(args.data, clip_len=arch.input[0],
                          stride=args.stride)
    metrics = evaluate(model, dataset, arch, task=args.task,
                       stride=args.stride)
    width = max(len(k) for k in metrics)
    for key, value in metrics.items():
        print(f"{key:<{width}}  {value:.6f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w") as fh:
        fh.write("metric,value\n")
        for key, value in metrics.items():
            fh.write(f"{key},{value!r}\n")
    write_run_record(out, "eval",
                     _config_snapshot(arch, train, task=args.task,
                                      checkpoint=str(args.checkpoint)),
                     train.seed, metrics)
    return 0


def cmd_reconstruct(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    arch, train = deserialize(payload["config"])
    if arch is None or train is None:
        raise ValueError("checkpoint config snapshot is incomplete")
    model = MaskedAutoencoder(arch, variant=args.variant,
                              downsample=args.downsample)
    model.load_state_dict(payload["model"])
    model.eval()
    dataset = ClipDataset(args.data, clip_len=arch.input[0],
                          stride=args.stride)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    losses = {}
    for index in args.index:
        if not 0 <= index < len(dataset):
            raise ValueError(f"clip index {index} outside [0, {len(dataset)})")
        clip = dataset.clip(index, 0)
        if clip.shape[1:3] != tuple(arch.input[1:]):
            clip = np.stack([crop_face_region(f, *arch.input[1:])
                             for f in clip])
        patches = clip_to_patches(clip, dataset, arch)
        mask = make_tube_mask(arch.grid, arch.masking_ratio, rng)
        x = torch.from_numpy(patches).unsqueeze(0)
        with torch.no_grad():
            pred, _ = model(x, [mask])
            loss = reconstruction_loss(pred, x, mask)
        losses[f"loss_{index}"] = loss.item()

        raw = patchify(clip, arch.patch)
        masked = raw.copy()
        masked[mask.masked_tokens()] = 0.5
        recon_std = pred.squeeze(0).numpy()
        recon = unpatchify(recon_std, arch.grid, arch.patch)
        recon = np.clip(dataset.unstandardize(recon), 0.0, 1.0)
        rows = [unpatchify(raw, arch.grid, arch.patch),
                unpatchify(masked, arch.grid, arch.patch),
                recon]
        # one image per clip: frames left to right, the three rows stacked
        strips = [np.concatenate(list(row), axis=1) for row in rows]
        sheet = np.concatenate(strips, axis=0)
        sheet8 = np.round(np.clip(sheet, 0.0, 1.0) * 255.0).astype(np.uint8)
        write_ppm(out / f"recon_{index:03d}.ppm", sheet8)
        print(f"clip {index}: masked loss {loss.item():.6f} -> "
              f"recon_{index:03d}.ppm")
    write_run_record(out, "reconstruct",
                     _config_snapshot(arch, train,
                                      checkpoint=str(args.checkpoint)),
                     args.seed, losses)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svfap",
        description="Masked facial-video autoencoding with a temporal-pyramid "
                    "bottleneck encoder: data synthesis, training, "
                    "evaluation, and cost accounting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic clip dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0,
                   help="pixel noise standard deviation")
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    p.add_argument("--data", required=True, help="manifest.csv path")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--stride", type=int, default=1)
    _add_config_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised training of encoder+head")
    p.add_argument("--data", required=True, help="manifest.csv path")
    p.add_argument("--out", required=True)
    p.add_argument("--init", default=None,
                   help="pretraining checkpoint for encoder weights")
    p.add_argument("--task", default="class", choices=("class", "scores"))
    p.add_argument("--stride", type=int, default=1)
    _add_config_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="two-clip evaluation of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", default="class", choices=("class", "scores"))
    p.add_argument("--stride", type=int, default=1)
    _add_model_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count", help="analytic parameter and FLOP tables")
    p.add_argument("--regime", default="both",
                   choices=("finetune", "pretrain", "both"))
    p.add_argument("--table4", action="store_true",
                   help="print the encoder-variant comparison grid")
    p.add_argument("--classes", type=int, default=7,
                   help="prediction-head output count")
    p.add_argument("--out", default=None,
                   help="optional directory for counts.csv and run.json")
    _add_config_flags(p)
    p.add_argument("--variant", default="full", choices=complexity.VARIANTS)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("reconstruct",
                       help="dump original/masked/reconstructed frame sheets")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True,
                   help="pretraining checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int, nargs="+", default=[0],
                   help="clip indices to render")
    p.add_argument("--seed", type=int, default=0, help="mask sampling seed")
    p.add_argument("--stride", type=int, default=1)
    _add_model_flags(p)
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_determinism()
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
