#!/usr/bin/env python3
"""
pvgan — Paired 3D voxel GAN training and evaluation

Usage:
    pvgan ingest SRC DST --class-name chair [--n-conditions 2] [--skip-bad]
    pvgan train [--config run.json] [--synthetic] [--resolution 16] [--epochs 2]
                [--baseline | --paired] [--resume ckpt.pvg] [section.key=value ...]
    pvgan generate CKPT [--n-latents 4] [--all-conditions] [--merge] [--seed 0]
    pvgan evaluate CKPT [--n-latents 128] [--label proposed] [--out report]
    pvgan export GRID [--obj out.obj] [--png out.png] [--threshold 0.5]
    pvgan gradcheck [--samples 50] [--n-conditions 2]
    pvgan info CKPT

Exit codes: 0 success, 1 invalid input or config, 2 numeric/runtime error,
3 unreadable or unwritable file.
"""

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

import numpy as np
import torch

from pvgan.config import (
    BINARIZE_THRESHOLD, LOG_LEVEL, OUTPUT_ROOT, RunConfig, apply_overrides, configure_threads, load_run_config,
)
from pvgan.errors import ConfigError, ContractViolation, NumericError, PVGANError


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as ConfigError (exit 1) instead of exiting 2."""

    def error(self, message):
        raise ConfigError("arguments", message)


# ── ingest ─────────────────────────────────────────────────────────────────────

def _ingest_parser():
    p = _Parser(prog="pvgan ingest", description="Convert voxelized ModelNet-style grids into the dataset layout")
    p.add_argument("src", type=Path, help="Source directory with O<k> grid files")
    p.add_argument("dst", type=Path, help="Dataset root to write into")
    p.add_argument("--class-name", required=True, help="Object class (e.g. chair)")
    p.add_argument("--n-conditions", type=int, default=2, choices=(2, 4))
    p.add_argument("--resolution", type=int, default=32, help="Target resolution (30³ inputs are padded)")
    p.add_argument("--format", dest="fmt", default="vox1", choices=("vox1", "binvox"))
    p.add_argument("--skip-bad", action="store_true", help="Skip unreadable files instead of failing")
    return p


def _run_ingest(args) -> int:
    from pvgan.data.ingest import ingest_tree

    summary = ingest_tree(args.src, args.dst, args.class_name, args.n_conditions,
                          args.resolution, args.fmt, args.skip_bad)
    print(f"Ingested {args.class_name}: {summary.objects} objects, {summary.files_written} files written")
    print(f"   Ignored orientations: {summary.files_ignored}")
    print(f"   Incomplete objects: {summary.incomplete_objects}")
    print(f"   Bad files: {len(summary.bad_files)}")
    for path, error in summary.bad_files:
        print(f"      {error}")
    if summary.bad_files and not args.skip_bad:
        print("Error: unreadable files found (use --skip-bad to ignore them)", file=sys.stderr)
        return 3
    return 0


# ── train ──────────────────────────────────────────────────────────────────────

def _train_parser():
    p = _Parser(prog="pvgan train", description="Train a conditional voxel GAN (paired step on by default)")
    p.add_argument("overrides", nargs="*", help="Config overrides, section.key=value")
    p.add_argument("--config", type=Path, help="Run config JSON (train/model/dataset sections)")
    p.add_argument("--out", type=Path, help="Run directory (default: $PVGAN_OUTPUT_ROOT/run-<time>)")
    p.add_argument("--synthetic", action="store_true", help="Train on the synthetic asymmetric dataset")
    p.add_argument("--resolution", type=int, help="Grid resolution for model and dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--baseline", action="store_true", help="Conditional GAN without the paired step")
    mode.add_argument("--paired", action="store_true", help="Enable the paired step")
    p.add_argument("--resume", type=Path, help="Continue from a checkpoint")
    return p


def _train_overrides(args) -> list[str]:
    overrides = list(args.overrides)
    if args.synthetic:
        overrides.append("dataset.synthetic=true")
    if args.resolution is not None:
        overrides.append(f"dataset.resolution={args.resolution}")
    if args.epochs is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.baseline:
        overrides.append("train.paired_step_enabled=false")
    if args.paired:
        overrides.append("train.paired_step_enabled=true")
    return overrides


def _run_train(args) -> int:
    from pvgan.training.trainer import FINAL_CHECKPOINT, train

    config = load_run_config(args.config) if args.config else RunConfig()
    overrides = _train_overrides(args)
    config = apply_overrides(config, overrides)
    out_dir = args.out or OUTPUT_ROOT / f"run-{datetime.now():%Y%m%d-%H%M%S}"
    state = train(config, out_dir, resume=args.resume, overrides=overrides)
    print(f"Trained {state.step} steps ({state.epoch} epochs) -> {out_dir / FINAL_CHECKPOINT}")
    return 0


# ── generate ───────────────────────────────────────────────────────────────────

def _generate_parser():
    p = _Parser(prog="pvgan generate", description="Generate grids from a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--n-latents", type=int, default=1)
    p.add_argument("--all-conditions", action="store_true", help="One grid per condition for each latent")
    p.add_argument("--condition", type=int, default=0, help="Condition to generate without --all-conditions")
    p.add_argument("--merge", action="store_true", help="Also write the aligned-and-merged grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, help="Fail unless the checkpoint has this resolution")
    p.add_argument("--format", dest="fmt", default="vox1", choices=("vox1", "binvox"))
    p.add_argument("--out", type=Path, help="Output directory (default: $PVGAN_OUTPUT_ROOT/generated)")
    return p


def _run_generate(args) -> int:
    from pvgan.model.networks import generator_forward, sample_latents
    from pvgan.training.trainer import load_generator
    from pvgan.voxels.formats import write_grid
    from pvgan.voxels.grid import Condition, VoxelGrid, align, all_conditions, merge

    if args.n_latents < 1:
        raise ContractViolation("--n-latents must be ≥ 1")
    gen, config = load_generator(args.checkpoint, args.resolution)
    n = config.model.n_conditions
    conditions = all_conditions(n) if (args.all_conditions or args.merge) else [Condition(args.condition, n)]
    out_dir = args.out or OUTPUT_ROOT / "generated"
    dtype = next(gen.parameters()).dtype

    z = sample_latents(args.n_latents, config.model, torch.Generator().manual_seed(args.seed), dtype)
    z_rep = z.repeat_interleave(len(conditions), dim=0)
    y = torch.tensor([c.index for c in conditions], dtype=torch.int64).repeat(args.n_latents)
    with torch.no_grad():
        out = generator_forward(gen, z_rep, y, mode="eval").cpu().numpy().astype(np.float32)
    out = out.reshape(args.n_latents, len(conditions), *out.shape[1:])

    written = 0
    for i in range(args.n_latents):
        grids = [VoxelGrid(np.clip(out[i, j], 0.0, 1.0)) for j in range(len(conditions))]
        for cond, grid in zip(conditions, grids):
            write_grid(grid, out_dir / f"latent{i:04d}_cond{cond.index}.{args.fmt}", fmt=args.fmt)
            written += 1
        if args.merge:
            write_grid(merge(align(grids, conditions)), out_dir / f"latent{i:04d}_merged.{args.fmt}", fmt=args.fmt)
            written += 1
    print(f"Wrote {written} grid files to {out_dir}")
    return 0


# ── evaluate ───────────────────────────────────────────────────────────────────

def _evaluate_parser():
    p = _Parser(prog="pvgan evaluate", description="AAD / AVAR pair-consistency report for a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--n-latents", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", help="Method name for the table row (default: paired/baseline)")
    p.add_argument("--class-name", help="Class column (default: the checkpoint's dataset class)")
    p.add_argument("--out", type=Path, help="Report prefix; writes <out>.jsonl (appended) and <out>.txt")
    return p


def _run_evaluate(args) -> int:
    from pvgan.metrics.pairs import evaluate, format_report_table, read_summary_rows, report_records
    from pvgan.training.trainer import load_generator

    gen, config = load_generator(args.checkpoint)
    report = evaluate(gen, config.model, args.n_latents, config.model.n_conditions, args.seed)
    label = args.label or ("paired" if config.train.paired_step_enabled else "baseline")
    class_name = args.class_name or ("synthetic" if config.dataset.synthetic else config.dataset.class_name)
    records = report_records(report, label, class_name, checkpoint=str(args.checkpoint), seed=args.seed)

    rows = [json.loads(records[0])]
    if args.out:
        records_path = args.out.with_suffix(".jsonl")
        # earlier rows are read first so a damaged file is never appended to
        rows = read_summary_rows(records_path) + rows
        records_path.parent.mkdir(parents=True, exist_ok=True)
        with open(records_path, "a") as fh:
            fh.write("\n".join(records) + "\n")
        table = format_report_table(rows)
        args.out.with_suffix(".txt").write_text(table + "\n")
    else:
        table = format_report_table(rows)
    print(table)
    print(f"\n{report.n_latents} latents, {report.n_conditions} conditions, "
          f"{report.degenerate_count} with an empty sample")
    return 0


# ── export ─────────────────────────────────────────────────────────────────────

def _export_parser():
    p = _Parser(prog="pvgan export", description="Export a grid as an OBJ mesh and/or PNG preview")
    p.add_argument("grid", type=Path)
    p.add_argument("--obj", type=Path, help="OBJ output path")
    p.add_argument("--png", type=Path, help="PNG preview path")
    p.add_argument("--threshold", type=float, default=BINARIZE_THRESHOLD)
    return p


def _run_export(args) -> int:
    from pvgan.voxels.formats import export_obj, read_grid

    if not args.obj and not args.png:
        raise ContractViolation("nothing to do: pass --obj and/or --png")
    grid = read_grid(args.grid)
    if args.obj:
        counts = export_obj(grid, args.obj, args.threshold)
        print(f"OBJ: {args.obj} ({counts['cubes']} cubes, {counts['vertices']} vertices, {counts['faces']} faces)")
    if args.png:
        from pvgan.voxels.render import render_png

        render_png(grid, args.png, args.threshold, title=args.grid.name)
        print(f"PNG: {args.png}")
    return 0


# ── gradcheck / info ───────────────────────────────────────────────────────────

def _gradcheck_parser():
    p = _Parser(prog="pvgan gradcheck", description="Finite-difference check of d_loss, g_loss and the paired loss")
    p.add_argument("--samples", type=int, default=50, help="Coordinates per loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-conditions", type=int, default=2, choices=(2, 4))
    return p


def _run_gradcheck(args) -> int:
    from pvgan.model.gradients import max_rel_error
    from pvgan.training.gradcheck import GRADCHECK_TOLERANCE, failing, loss_gradient_checks

    results = loss_gradient_checks(args.samples, args.seed, args.n_conditions)
    for name, rows in results.items():
        print(f"{name:<18} {len(rows):>4} coords   max rel error {max_rel_error(rows):.2e}")
    bad = failing(results)
    if bad:
        raise NumericError(f"gradient check failed (tolerance {GRADCHECK_TOLERANCE:g}): {bad}")
    return 0


def _info_parser():
    p = _Parser(prog="pvgan info", description="Show checkpoint statistics")
    p.add_argument("checkpoint", type=Path)
    return p


def _run_info(args) -> int:
    from pvgan.model.checkpoint import checkpoint_stats

    stats = checkpoint_stats(args.checkpoint)
    if not stats["exists"]:
        raise FileNotFoundError(f"{args.checkpoint} does not exist")
    print(f"Checkpoint: {args.checkpoint}")
    print(f"   Version: {stats['version']}")
    print(f"   Step: {stats['step']} (epoch {stats['epoch']}, prev accuracy {stats['prev_accuracy']:.3f})")
    print(f"   Resolution: {stats['resolution']}  Conditions: {stats['n_conditions']}")
    print(f"   Generator values: {stats['generator_values']}")
    print(f"   Discriminator values: {stats['discriminator_values']}")
    print(f"   Optimizer values: {stats['optimizer_values']}")
    print(f"   Size: {stats['file_size_mb']} MB")
    return 0


COMMANDS = {
    "ingest": (_ingest_parser, _run_ingest),
    "train": (_train_parser, _run_train),
    "generate": (_generate_parser, _run_generate),
    "evaluate": (_evaluate_parser, _run_evaluate),
    "export": (_export_parser, _run_export),
    "gradcheck": (_gradcheck_parser, _run_gradcheck),
    "info": (_info_parser, _run_info),
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL, logging.INFO),
        format='%(asctime)s [pvgan] %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
    )
    if not argv or argv[0] in ("-h", "--help"):
        print(__doc__.strip())
        return 0
    if argv[0] not in COMMANDS:
        print(f"Error: unknown command {argv[0]!r} (expected one of {', '.join(COMMANDS)})", file=sys.stderr)
        return 1

    build_parser, run = COMMANDS[argv[0]]
    try:
        # intermixed: train overrides may sit on either side of the options
        args = build_parser().parse_intermixed_args(argv[1:])
        configure_threads()
        return run(args)
    except PVGANError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 3
    except RuntimeError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
