"""
pvgan — Convert a voxelized ModelNet-style class into the dataset layout

Accepted source layouts (searched recursively):

    <src>/<object_id>/O<k>.binvox          one directory per object
    <src>/<object_id>_O<k>.binvox          flat, orientation as a suffix

Only the orientations mapped to the requested conditions are converted;
30³ grids are padded to 32³ and every grid is binarized. The destination is
<dst>/<class_name>/<object_id>/O<k>.<fmt> plus a manifest of the objects that
have every required orientation.

Converted files are staged under <dst>/.ingest-* and only moved into place
once the whole source has been read; a run that stops on bad files leaves
the destination as it was.
"""

import logging
import os
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from pvgan.data.loader import ORIENTATION_FILES, write_manifest
from pvgan.errors import ContractViolation, FormatError
from pvgan.voxels.formats import GRID_SUFFIXES, read_grid, write_grid
from pvgan.voxels.grid import binarize, pad_to_target

log = logging.getLogger(__name__)

_FLAT_NAME = re.compile(r"^(?P<object>.+?)[_\-](?P<orientation>O\d{1,2})$")
_DIR_NAME = re.compile(r"^O\d{1,2}$")


@dataclass
class IngestSummary:
    objects: int = 0              # objects with every required orientation
    files_written: int = 0
    files_ignored: int = 0        # orientations outside the condition subset
    incomplete_objects: int = 0
    bad_files: list[tuple[str, str]] = field(default_factory=list)


def _identify(path: Path) -> tuple[str, str] | None:
    """(object_id, orientation) for a source grid file, or None if the name doesn't fit."""
    stem = path.stem
    if _DIR_NAME.match(stem):
        return path.parent.name, stem
    m = _FLAT_NAME.match(stem)
    if m:
        return m.group("object"), m.group("orientation")
    return None


def ingest_tree(src_dir, dst_dir, class_name: str, n_conditions: int = 2, resolution: int = 32,
                fmt: str = "vox1", skip_bad: bool = False) -> IngestSummary:
    src_dir, dst_dir = Path(src_dir), Path(dst_dir)
    if n_conditions not in ORIENTATION_FILES:
        raise ContractViolation(f"n_conditions must be one of {sorted(ORIENTATION_FILES)}")
    if fmt not in ("vox1", "binvox"):
        raise ContractViolation(f"format must be vox1 or binvox, got {fmt!r}")
    wanted = set(ORIENTATION_FILES[n_conditions].values())
    class_dir = dst_dir / class_name
    summary = IngestSummary()

    files = sorted(p for p in src_dir.rglob("*") if p.is_file() and p.suffix in GRID_SUFFIXES)
    if not files:
        log.warning(f"No grid files found under {src_dir}")
        return summary
    log.info(f"Found {len(files)} grid files under {src_dir}")

    dst_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".ingest-", dir=dst_dir))
    try:
        found = _convert(files, staging, wanted, resolution, fmt, summary)
        complete = sorted(oid for oid, got in found.items() if got == wanted)
        summary.objects = len(complete)
        summary.incomplete_objects = len(found) - len(complete)
        if summary.bad_files and not skip_bad:
            log.warning(f"Nothing written to {class_dir}: {len(summary.bad_files)} bad files")
            summary.files_written = 0
            return summary
        _publish(staging, class_dir)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    if complete:
        write_manifest(class_dir, complete)
    return summary


def _convert(files: list[Path], staging: Path, wanted: set[str], resolution: int, fmt: str,
             summary: IngestSummary) -> dict[str, set[str]]:
    """Write every readable wanted orientation under staging; returns object id -> orientations."""
    found: dict[str, set[str]] = {}
    for path in files:
        ident = _identify(path)
        if ident is None:
            log.warning(f"Ignoring {path}: name has no O<k> orientation")
            summary.files_ignored += 1
            continue
        object_id, orientation = ident
        if orientation not in wanted:
            summary.files_ignored += 1
            continue
        try:
            grid = read_grid(path)
            if grid.resolution == resolution - 2:
                grid = pad_to_target(grid, resolution)
            if grid.resolution != resolution:
                raise FormatError(f"grid resolution {grid.resolution}, expected {resolution}", path=path)
        except (FormatError, OSError) as e:
            summary.bad_files.append((str(path), str(e)))
            log.warning(f"Bad file: {e}")
            continue
        write_grid(binarize(grid), staging / object_id / f"{orientation}.{fmt}", fmt=fmt)
        summary.files_written += 1
        found.setdefault(object_id, set()).add(orientation)
    return found


def _publish(staging: Path, class_dir: Path) -> None:
    for src in sorted(staging.rglob("*")):
        if src.is_file():
            dest = class_dir / src.relative_to(staging)
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dest)
