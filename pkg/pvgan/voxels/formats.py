"""
pvgan — Grid file formats

VOX1 (native):
    b"VOX1", little-endian u32 dx, dy, dz, u8 payload flag, payload.
    flag 0: bit-packed occupancy, x-fastest, least significant bit first.
    flag 1: little-endian float32 array, x-fastest.

binvox (import/export):
    ASCII header ("#binvox 1", "dim D D D", "translate ...", "scale ...",
    "data"), then (value, count) byte pairs in binvox scan order: x slowest,
    then z, then y fastest.

OBJ (export only): one unit cube, 8 vertices and 12 triangles, per occupied
voxel of the binarized grid.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from pvgan.config import BINARIZE_THRESHOLD
from pvgan.errors import ContractViolation, FormatError
from pvgan.voxels.grid import VoxelGrid, binarize

log = logging.getLogger(__name__)

VOX1_MAGIC = b"VOX1"
VOX1_HEADER = struct.Struct("<4sIIIB")
FLAG_PACKED = 0
FLAG_FLOAT = 1

BINVOX_MAGIC = b"#binvox"
MAX_DIM = 1024  # larger declared edges are treated as corrupt headers

GRID_SUFFIXES = (".vox1", ".binvox")


def _x_fastest(values: np.ndarray) -> np.ndarray:
    # [x, y, z] C-order → z slowest, x fastest
    return values.transpose(2, 1, 0).ravel()


def _from_x_fastest(flat: np.ndarray, dim: int) -> np.ndarray:
    return flat.reshape(dim, dim, dim).transpose(2, 1, 0)


# ── VOX1 ───────────────────────────────────────────────────────────────────────

def encode_vox1(grid: VoxelGrid, packed: Optional[bool] = None) -> bytes:
    """Serialize a grid. packed=None packs bits whenever the grid is binary."""
    if packed is None:
        packed = grid.is_binary()
    d = grid.resolution
    flat = _x_fastest(grid.values)
    if packed:
        payload = np.packbits(flat > BINARIZE_THRESHOLD, bitorder="little").tobytes()
        flag = FLAG_PACKED
    else:
        payload = flat.astype("<f4").tobytes()
        flag = FLAG_FLOAT
    return VOX1_HEADER.pack(VOX1_MAGIC, d, d, d, flag) + payload


def decode_vox1(data: bytes, path=None) -> VoxelGrid:
    if len(data) < VOX1_HEADER.size:
        raise FormatError("truncated VOX1 header", path=path, offset=len(data))
    magic, dx, dy, dz, flag = VOX1_HEADER.unpack_from(data, 0)
    if magic != VOX1_MAGIC:
        raise FormatError(f"bad magic {magic!r}", path=path, offset=0)
    for i, d in enumerate((dx, dy, dz)):
        if d == 0 or d > MAX_DIM:
            raise FormatError(f"dimension {d} out of range", path=path, offset=4 + 4 * i)
    if not dx == dy == dz:
        raise FormatError(f"non-cubic grid {dx}x{dy}x{dz}", path=path, offset=4)
    count = dx * dy * dz
    offset = VOX1_HEADER.size
    if flag == FLAG_PACKED:
        need = (count + 7) // 8
    elif flag == FLAG_FLOAT:
        need = count * 4
    else:
        raise FormatError(f"unknown payload flag {flag}", path=path, offset=16)
    available = len(data) - offset
    if available < need:
        raise FormatError(f"truncated payload: {available} of {need} bytes", path=path, offset=len(data))
    if available > need:
        raise FormatError(f"{available - need} trailing bytes after payload", path=path, offset=offset + need)

    if flag == FLAG_PACKED:
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=need, offset=offset),
                             count=count, bitorder="little")
        flat = bits.astype(np.float32)
    else:
        flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float32)
        if not np.all((flat >= 0.0) & (flat <= 1.0)):
            bad = int(np.argmax(~((flat >= 0.0) & (flat <= 1.0))))
            raise FormatError("value outside [0, 1]", path=path, offset=offset + 4 * bad)
    return VoxelGrid._trusted(_from_x_fastest(flat, dx))


# ── binvox ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class BinvoxMeta:
    """translate/scale header fields, kept verbatim so a round trip reproduces them."""

    translate: tuple = ("0", "0", "0")
    scale: str = "1"


def encode_binvox(grid: VoxelGrid, meta: Optional[BinvoxMeta] = None) -> bytes:
    """binvox stores occupancy only; non-binary grids are binarized (strict 0.5)."""
    meta = meta or BinvoxMeta()
    d = grid.resolution
    occ = binarize(grid).values.astype(np.uint8)
    flat = occ.transpose(0, 2, 1).ravel()  # x, z, y-fastest

    header = (
        f"#binvox 1\n"
        f"dim {d} {d} {d}\n"
        f"translate {' '.join(meta.translate)}\n"
        f"scale {meta.scale}\n"
        f"data\n"
    ).encode("ascii")

    # run boundaries, then split runs longer than 255
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    out = bytearray()
    for s, e in zip(starts, ends):
        value = int(flat[s])
        length = int(e - s)
        while length > 0:
            run = min(length, 255)
            out += bytes((value, run))
            length -= run
    return header + bytes(out)


def decode_binvox(data: bytes, path=None) -> tuple[VoxelGrid, BinvoxMeta]:
    if not data.startswith(BINVOX_MAGIC):
        raise FormatError("bad magic, expected '#binvox'", path=path, offset=0)
    pos = 0
    dim = None
    translate = ("0", "0", "0")
    scale = "1"
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise FormatError("header ended before 'data' line", path=path, offset=len(data))
        line = data[pos:nl].decode("ascii", errors="replace").strip()
        line_start = pos
        pos = nl + 1
        if line == "data":
            break
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "dim":
            try:
                dims = [int(p) for p in parts[1:4]]
            except ValueError:
                raise FormatError(f"bad dim line {line!r}", path=path, offset=line_start) from None
            if len(dims) != 3 or any(d <= 0 or d > MAX_DIM for d in dims):
                raise FormatError(f"dimension out of range in {line!r}", path=path, offset=line_start)
            if not dims[0] == dims[1] == dims[2]:
                raise FormatError(f"non-cubic grid {dims}", path=path, offset=line_start)
            dim = dims[0]
        elif parts[0] == "translate":
            translate = tuple(parts[1:4])
        elif parts[0] == "scale":
            scale = parts[1] if len(parts) > 1 else "1"
    if dim is None:
        raise FormatError("missing dim line", path=path, offset=pos)

    total = dim ** 3
    body = np.frombuffer(data[pos:], dtype=np.uint8) if pos < len(data) else np.empty(0, dtype=np.uint8)
    if body.size % 2:
        raise FormatError("odd-length run-length payload", path=path, offset=len(data))
    values = body[0::2]
    counts = body[1::2].astype(np.int64)
    if values.size and values.max() > 1:
        bad = int(np.argmax(values > 1))
        raise FormatError(f"voxel value {int(values[bad])} is not 0/1", path=path, offset=pos + 2 * bad)
    ends = np.cumsum(counts)
    if ends.size and ends[-1] > total:
        bad = int(np.searchsorted(ends, total, side="right"))
        raise FormatError(f"run-length data overflows {total} voxels", path=path, offset=pos + 2 * bad)
    if not ends.size or ends[-1] < total:
        got = int(ends[-1]) if ends.size else 0
        raise FormatError(f"truncated run-length data: {got} of {total} voxels", path=path, offset=len(data))

    flat = np.repeat(values, counts).astype(np.float32)
    arr = flat.reshape(dim, dim, dim).transpose(0, 2, 1)  # [x][z][y] → [x][y][z]
    return VoxelGrid._trusted(arr), BinvoxMeta(translate=translate, scale=scale)


# ── Dispatch ───────────────────────────────────────────────────────────────────

def read_grid(path) -> VoxelGrid:
    """Read a VOX1 or binvox file, detected by magic bytes."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(VOX1_MAGIC):
        return decode_vox1(data, path=path)
    if data.startswith(BINVOX_MAGIC):
        return decode_binvox(data, path=path)[0]
    raise FormatError("unrecognised grid file (magic is neither VOX1 nor #binvox)", path=path, offset=0)


def read_binvox(path) -> tuple[VoxelGrid, BinvoxMeta]:
    path = Path(path)
    return decode_binvox(path.read_bytes(), path=path)


def write_grid(grid: VoxelGrid, path, fmt: Optional[str] = None, meta: Optional[BinvoxMeta] = None) -> Path:
    """Write a grid; fmt is 'vox1' or 'binvox', defaulting from the file suffix."""
    path = Path(path)
    fmt = fmt or ("binvox" if path.suffix == ".binvox" else "vox1")
    if fmt == "binvox":
        data = encode_binvox(grid, meta)
    elif fmt == "vox1":
        data = encode_vox1(grid)
    else:
        raise ContractViolation(f"unknown grid format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


# ── OBJ export ─────────────────────────────────────────────────────────────────

_CUBE_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
    dtype=np.int64,
)
# counter-clockwise seen from outside, 1-based within a cube
_CUBE_FACES = np.array(
    [[1, 3, 2], [1, 4, 3],   # z = 0
     [5, 6, 7], [5, 7, 8],   # z = 1
     [1, 2, 6], [1, 6, 5],   # y = 0
     [4, 8, 7], [4, 7, 3],   # y = 1
     [1, 5, 8], [1, 8, 4],   # x = 0
     [2, 3, 7], [2, 7, 6]],  # x = 1
    dtype=np.int64,
)


def export_obj(grid: VoxelGrid, path, threshold: float = BINARIZE_THRESHOLD) -> dict:
    """Write one cube per occupied voxel. Returns {"cubes", "vertices", "faces"}."""
    path = Path(path)
    cells = np.argwhere(binarize(grid, threshold).values > 0)
    lines = [f"# pvgan voxel export: {len(cells)} cubes, resolution {grid.resolution}"]
    for n, cell in enumerate(cells):
        for corner in _CUBE_CORNERS:
            x, y, z = cell + corner
            lines.append(f"v {x} {y} {z}")
        base = 8 * n
        for a, b, c in _CUBE_FACES:
            lines.append(f"f {base + a} {base + b} {base + c}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    log.debug(f"OBJ export: {path} ({len(cells)} cubes)")
    return {"cubes": len(cells), "vertices": 8 * len(cells), "faces": 12 * len(cells)}
