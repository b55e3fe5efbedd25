"""
pvgan — Dataset loading, pairing modes and batching

On-disk layout (one directory per object, one file per orientation):

    <root>/<class>/<object_id>/O<k>.vox1      (or O<k>.binvox)
    <root>/<class>/manifest.txt              optional, one object id per line

ModelNet ships 12 orientations O1..O12, 30° apart. Only the quarter-turn
ones are ever read: O1→0°, O4→90°, O7→180°, O10→270°.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence, TypeVar

import numpy as np

from pvgan.config import LOAD_WORKERS, PAIRING_MODES, DatasetSpec
from pvgan.errors import ContractViolation, FormatError
from pvgan.voxels.formats import GRID_SUFFIXES, read_grid
from pvgan.voxels.grid import Condition, VoxelGrid, all_conditions, binarize, pad_to_target

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"

T = TypeVar("T")

ORIENTATION_FILES = {
    2: {0: "O1", 1: "O7"},
    4: {0: "O1", 1: "O4", 2: "O7", 3: "O10"},
}


@dataclass(frozen=True)
class ConditionedSample:
    grid: VoxelGrid
    condition: Condition
    source_id: str


# ── Manifest / scanning ────────────────────────────────────────────────────────

def scan_objects(class_dir: Path) -> list[str]:
    """Object ids are the names of the class directory's subdirectories."""
    if not class_dir.is_dir():
        return []
    return sorted(p.name for p in class_dir.iterdir() if p.is_dir() and not p.name.startswith("."))


def read_manifest(class_dir: Path) -> Optional[list[str]]:
    path = class_dir / MANIFEST_NAME
    if not path.exists():
        return None
    ids = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            ids.append(line)
    return ids


def write_manifest(class_dir: Path, object_ids: Sequence[str]) -> Path:
    path = class_dir / MANIFEST_NAME
    path.write_text("".join(f"{oid}\n" for oid in object_ids))
    return path


def _object_ids(class_dir: Path) -> list[str]:
    ids = read_manifest(class_dir)
    if ids is not None:
        return ids
    ids = scan_objects(class_dir)
    if ids:
        try:
            write_manifest(class_dir, ids)
        except OSError as e:
            log.warning(f"Could not write manifest in {class_dir}: {e}")
    return ids


def orientation_file(object_dir: Path, orientation: str) -> Optional[Path]:
    for suffix in GRID_SUFFIXES:
        candidate = object_dir / f"{orientation}{suffix}"
        if candidate.exists():
            return candidate
    return None


# ── Loading ────────────────────────────────────────────────────────────────────

def _prepare_grid(grid: VoxelGrid, resolution: int, path: Path) -> VoxelGrid:
    if grid.resolution == resolution - 2:
        grid = pad_to_target(grid, resolution)
    if grid.resolution != resolution:
        raise FormatError(f"grid resolution {grid.resolution}, dataset expects {resolution}", path=path)
    if not grid.is_binary():
        grid = binarize(grid)
    return grid


def _load_object(class_dir: Path, object_id: str, conditions: list[Condition],
                 resolution: int) -> Optional[list[ConditionedSample]]:
    """All retained orientations of one object, or None when one is missing."""
    object_dir = class_dir / object_id
    names = ORIENTATION_FILES[len(conditions)]
    paths = []
    for cond in conditions:
        path = orientation_file(object_dir, names[cond.index])
        if path is None:
            log.warning(f"Skipping {object_id}: missing orientation {names[cond.index]}")
            return None
        paths.append(path)
    return [
        ConditionedSample(_prepare_grid(read_grid(p), resolution, p), cond, object_id)
        for p, cond in zip(paths, conditions)
    ]


def load_class(spec: DatasetSpec, workers: int = LOAD_WORKERS) -> list[ConditionedSample]:
    """Load one object class. Order is object id, then condition index."""
    class_dir = Path(spec.root_path) / spec.class_name
    conditions = all_conditions(spec.n_conditions)
    object_ids = _object_ids(class_dir)
    if not object_ids:
        log.warning(f"No objects found under {class_dir}")
        return []

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        # map() yields in submission order, so the result is independent of timing
        loaded = list(executor.map(
            lambda oid: _load_object(class_dir, oid, conditions, spec.resolution), object_ids
        ))

    samples = []
    skipped = 0
    for group in loaded:
        if group is None:
            skipped += 1
            continue
        samples.extend(group)
    log.info(f"Loaded {spec.class_name}: {len(samples) // len(conditions)} objects, "
             f"{len(samples)} samples ({skipped} skipped)")
    return samples


# ── Pairing modes ──────────────────────────────────────────────────────────────

def _by_condition(samples: Sequence[ConditionedSample]) -> dict[int, list[ConditionedSample]]:
    groups: dict[int, list[ConditionedSample]] = {}
    for s in samples:
        groups.setdefault(s.condition.index, []).append(s)
    return groups


def apply_pairing(samples: Sequence[ConditionedSample], mode: str, seed: int) -> list[ConditionedSample]:
    """Rearrange samples for one of the paired / unpaired / split-half variants.

    paired:     unchanged, every object keeps all its conditions.
    unpaired:   each condition's sample list is shuffled independently, so
                position i no longer refers to the same object across conditions.
    split-half: the object list is shuffled and cut into disjoint parts, one
                per condition; each object only contributes its own part's condition.
    """
    if mode not in PAIRING_MODES:
        raise ContractViolation(f"pairing mode must be one of {PAIRING_MODES}, got {mode!r}")
    samples = list(samples)
    if mode == "paired" or not samples:
        return samples

    rng = np.random.default_rng(seed)
    groups = _by_condition(samples)
    cond_ids = sorted(groups)

    if mode == "unpaired":
        shuffled = {c: [groups[c][i] for i in rng.permutation(len(groups[c]))] for c in cond_ids}
        out = []
        for i in range(max(len(v) for v in shuffled.values())):
            for c in cond_ids:
                if i < len(shuffled[c]):
                    out.append(shuffled[c][i])
        return out

    object_ids = sorted({s.source_id for s in samples})
    order = [object_ids[i] for i in rng.permutation(len(object_ids))]
    parts = np.array_split(np.arange(len(order)), len(cond_ids))
    owner = {}
    for c, part in zip(cond_ids, parts):
        for i in part:
            owner[order[i]] = c
    return [s for s in samples if owner[s.source_id] == s.condition.index]


# ── Batching ───────────────────────────────────────────────────────────────────

def batches_per_epoch(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size) if n_samples else 0


def batches(items: Sequence[T], batch_size: int, seed: int, epoch: int = 0) -> Iterator[list[T]]:
    """Seeded per-epoch permutation cut into batches; the short tail batch is kept.

    Training batches condition rows; any sequence works.
    """
    if batch_size < 1:
        raise ContractViolation(f"batch_size must be ≥ 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    for start in range(0, len(order), batch_size):
        yield [items[i] for i in order[start:start + batch_size]]


def condition_rows(samples: Sequence[ConditionedSample], n_conditions: int) -> list[tuple[ConditionedSample, ...]]:
    """Zip the per-condition sample lists into rows (X_0, ..., X_{n-1}).

    Each condition keeps the order it has in `samples`, so after paired
    pairing row i holds one object in every condition, while unpaired and
    split-half rows combine unrelated objects. Shorter condition lists cycle
    up to the longest one.
    """
    if not samples:
        return []
    groups = _by_condition(samples)
    missing = [c for c in range(n_conditions) if c not in groups]
    extra = sorted(set(groups) - set(range(n_conditions)))
    if missing or extra:
        raise ContractViolation(
            f"samples must cover conditions 0..{n_conditions - 1} exactly "
            f"(missing {missing}, unexpected {extra})"
        )
    longest = max(len(g) for g in groups.values())
    return [tuple(groups[c][i % len(groups[c])] for c in range(n_conditions)) for i in range(longest)]


def stack_batch(batch: Sequence[ConditionedSample]) -> tuple[np.ndarray, np.ndarray]:
    """(grids [B, R, R, R] float32, condition indices [B] int64)."""
    grids = np.stack([s.grid.values for s in batch]).astype(np.float32)
    conds = np.array([s.condition.index for s in batch], dtype=np.int64)
    return grids, conds


def load_dataset(spec: DatasetSpec) -> list[ConditionedSample]:
    """Resolve a DatasetSpec to its training samples (real or synthetic), pairing applied."""
    if spec.synthetic:
        from pvgan.data.synthetic import synth_dataset
        samples = synth_dataset(spec.synthetic_count, spec.resolution, spec.n_conditions, spec.seed)
    else:
        samples = load_class(spec)
    return apply_pairing(samples, spec.pairing_mode, spec.seed)
