"""
pvgan — Pair-consistency metrics

AAD: mean absolute difference between each aligned sample and the merged
grid, averaged over the R³ cells of each sample and then over the samples.
Lower is better.

AVAR: for each aligned sample, the share of its occupied voxels that are
also occupied in the merged grid (both strictly binarized at 0.5), averaged
over the samples. Higher is better. A sample with no occupied voxel scores 0
and is counted as degenerate.

Both are computed per latent (one sample per condition) and then averaged
over the latents of a batch.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from pvgan.config import BINARIZE_THRESHOLD, ModelConfig
from pvgan.errors import ContractViolation, FormatError
from pvgan.model.networks import Generator, sample_latents
from pvgan.training.losses import generate_pairs
from pvgan.voxels.grid import ROTATION_AXES, Condition, VoxelGrid, all_conditions

log = logging.getLogger(__name__)

EVAL_CHUNK = 32


@dataclass
class PairReport:
    aad: list[float] = field(default_factory=list)        # per latent
    avar: list[float] = field(default_factory=list)       # per latent
    batch_aad: float = 0.0
    batch_avar: float = 0.0
    n_conditions: int = 2
    degenerate_count: int = 0

    @property
    def n_latents(self) -> int:
        return len(self.aad)


# ── Core computation on [B, n, R, R, R] arrays ─────────────────────────────────

def align_stack(stack: np.ndarray) -> np.ndarray:
    """Rotate slot c of a [B, n, R, R, R] stack back from condition c's frame."""
    n = stack.shape[1]
    aligned = np.empty_like(stack)
    for cond in all_conditions(n):
        aligned[:, cond.index] = np.rot90(stack[:, cond.index], -cond.quarter_turns, axes=ROTATION_AXES)
    return aligned


def pair_metrics(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-latent (aad, avar, has_empty_sample) for a stack in condition order."""
    if stack.ndim != 5:
        raise ContractViolation(f"expected a [B, n, R, R, R] stack, got shape {stack.shape}")
    aligned = align_stack(stack.astype(np.float32))
    n = aligned.shape[1]
    # same arithmetic as voxels.grid.merge
    merged = (aligned.astype(np.float64).sum(axis=1) / n).astype(np.float32)

    diff = np.abs(aligned.astype(np.float64) - merged[:, None].astype(np.float64))
    aad = diff.reshape(diff.shape[0], -1).mean(axis=1)

    occ = aligned > BINARIZE_THRESHOLD
    merged_occ = merged > BINARIZE_THRESHOLD
    cells = tuple(range(2, occ.ndim))
    counts = occ.sum(axis=cells)
    shared = (occ & merged_occ[:, None]).sum(axis=cells)
    empty = counts == 0
    ratios = np.where(empty, 0.0, shared / np.maximum(counts, 1))
    return aad, ratios.mean(axis=1), empty.any(axis=1)


def _stack_by_condition(samples: Sequence[VoxelGrid], conditions: Sequence[Condition]) -> np.ndarray:
    if len(samples) != len(conditions):
        raise ContractViolation(f"{len(samples)} samples but {len(conditions)} conditions")
    if not samples:
        raise ContractViolation("metrics need one sample per condition")
    n = conditions[0].n_conditions
    indices = sorted(c.index for c in conditions)
    if indices != list(range(n)) or any(c.n_conditions != n for c in conditions):
        raise ContractViolation(f"need each of the {n} conditions exactly once, got {indices}")
    resolutions = {s.resolution for s in samples}
    if len(resolutions) != 1:
        raise ContractViolation(f"samples differ in resolution: {sorted(resolutions)}")
    ordered = sorted(zip(conditions, samples), key=lambda pair: pair[0].index)
    return np.stack([s.values for _, s in ordered])[None]


def aad(samples: Sequence[VoxelGrid], conditions: Sequence[Condition]) -> float:
    return float(pair_metrics(_stack_by_condition(samples, conditions))[0][0])


def avar_details(samples: Sequence[VoxelGrid], conditions: Sequence[Condition]) -> tuple[float, int]:
    """(avar, number of samples with no occupied voxel)."""
    stack = _stack_by_condition(samples, conditions)
    _, avar_values, _ = pair_metrics(stack)
    occupied = (stack[0] > BINARIZE_THRESHOLD).reshape(stack.shape[1], -1).any(axis=1)
    n_empty = int((~occupied).sum())
    return float(avar_values[0]), n_empty


def avar(samples: Sequence[VoxelGrid], conditions: Sequence[Condition]) -> float:
    return avar_details(samples, conditions)[0]


def report_from_stack(stack: np.ndarray) -> PairReport:
    aad_values, avar_values, empty = pair_metrics(stack)
    return PairReport(
        aad=[float(v) for v in aad_values],
        avar=[float(v) for v in avar_values],
        batch_aad=float(aad_values.mean()) if aad_values.size else 0.0,
        batch_avar=float(avar_values.mean()) if avar_values.size else 0.0,
        n_conditions=stack.shape[1],
        degenerate_count=int(empty.sum()),
    )


def evaluate(gen: Generator, model_config: ModelConfig, n_latents: int = 128,
             n_conditions: Optional[int] = None, seed: int = 0) -> PairReport:
    """Generate every condition for n_latents shared latents and score the pairs."""
    n_conditions = n_conditions or model_config.n_conditions
    if n_conditions != model_config.n_conditions:
        raise ContractViolation(
            f"model was built for {model_config.n_conditions} conditions, evaluation asked for {n_conditions}"
        )
    if n_latents < 1:
        raise ContractViolation(f"n_latents must be ≥ 1, got {n_latents}")
    dtype = next(gen.parameters()).dtype
    z = sample_latents(n_latents, model_config, torch.Generator().manual_seed(seed), dtype)
    chunks = []
    with torch.no_grad():
        for start in range(0, n_latents, EVAL_CHUNK):
            chunks.append(generate_pairs(gen, z[start:start + EVAL_CHUNK], mode="eval").cpu().numpy())
    report = report_from_stack(np.concatenate(chunks))
    if report.degenerate_count:
        log.warning(f"{report.degenerate_count} of {n_latents} latents produced an empty sample")
    return report


# ── Report rendering ───────────────────────────────────────────────────────────

def report_records(report: PairReport, label: str, class_name: str,
                   checkpoint: Optional[str] = None, seed: Optional[int] = None) -> list[str]:
    """JSON lines: one summary record, then one record per latent."""
    summary = {
        "type": "summary",
        "method": label,
        "class_name": class_name,
        "checkpoint": checkpoint,
        "seed": seed,
        "n_latents": report.n_latents,
        "n_conditions": report.n_conditions,
        "aad": report.batch_aad,
        "avar": report.batch_avar,
        "degenerate_count": report.degenerate_count,
    }
    lines = [json.dumps(summary, sort_keys=True)]
    for i, (a, v) in enumerate(zip(report.aad, report.avar)):
        lines.append(json.dumps({"type": "latent", "method": label, "class_name": class_name,
                                 "index": i, "aad": a, "avar": v}, sort_keys=True))
    return lines


SUMMARY_KEYS = ("method", "class_name", "aad", "avar")


def read_summary_rows(path) -> list[dict]:
    """Summary records of a results file; a missing file has none."""
    path = Path(path)
    if not path.exists():
        return []
    rows = []
    offset = 0
    for line in path.read_bytes().splitlines(keepends=True):
        start, offset = offset, offset + len(line)
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise FormatError(f"unreadable report record ({e})", path=path, offset=start) from None
        if not isinstance(record, dict):
            raise FormatError("report record is not a JSON object", path=path, offset=start)
        if record.get("type") != "summary":
            continue
        missing = [k for k in SUMMARY_KEYS if k not in record]
        if missing:
            raise FormatError(f"summary record lacks {', '.join(missing)}", path=path, offset=start)
        rows.append(record)
    return rows


def format_report_table(rows: Sequence[dict]) -> str:
    """Rows = methods, column pairs = AAD / AVAR per class. Later rows win on duplicates."""
    methods: list[str] = []
    classes: list[str] = []
    cells: dict[tuple[str, str], dict] = {}
    for row in rows:
        if row["method"] not in methods:
            methods.append(row["method"])
        if row["class_name"] not in classes:
            classes.append(row["class_name"])
        cells[(row["method"], row["class_name"])] = row

    header = ["Method"] + [f"{c} {metric}" for c in classes for metric in ("AAD", "AVAR")]
    body = []
    for m in methods:
        line = [m]
        for c in classes:
            row = cells.get((m, c))
            line += [f"{row['aad']:.4f}", f"{row['avar']:.4f}"] if row else ["-", "-"]
        body.append(line)

    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]

    def fmt(cells_: list[str]) -> str:
        return "  ".join(cell.ljust(w) for cell, w in zip(cells_, widths)).rstrip()

    out = [fmt(header), "  ".join("-" * w for w in widths)]
    out += [fmt(r) for r in body]
    return "\n".join(out)
