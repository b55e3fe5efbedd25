"""
pvgan — PVGAN1 checkpoint container

Layout (all integers little-endian):

    magic      6 bytes  b"PVGAN1"
    version    u32      CHECKPOINT_VERSION
    meta_len   u32      length of the JSON metadata block
    meta       bytes    UTF-8 JSON, keys sorted
    n_tensors  u32
    tensors    n_tensors × { u16 name_len, name, u8 dtype, u8 ndim, ndim × u32 dims, data }

Float tensors are stored as 32-bit floats unless the run trains in 64-bit
mode; integer buffers (batch-norm counters) as int64. A file is parsed
completely before anything is returned, so a truncated file never yields a
partial state.
"""

import json
import logging
import os
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from pvgan.errors import FormatError, VersionMismatch

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PVGAN1"
CHECKPOINT_VERSION = 1
CHECKPOINT_SUFFIX = ".pvg"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODE_FOR = {dt: code for code, dt in _DTYPE_CODES.items()}


def _dtype_code(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODE_FOR:
        raise FormatError(f"unsupported tensor dtype {arr.dtype}")
    return _CODE_FOR[dt]


def encode_checkpoint(meta: dict, tensors: "OrderedDict[str, np.ndarray]") -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)),
        meta_bytes,
        struct.pack("<I", len(tensors)),
    ]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    """Bounds-checked cursor over a checkpoint buffer."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint reading {what}", path=self.path, offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes, path=None) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    reader = _Reader(data, path)
    magic = reader.take(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", path=path, offset=0)
    (version,) = reader.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(version, CHECKPOINT_VERSION, path=path)

    (meta_len,) = reader.unpack("<I", "metadata length")
    meta_offset = reader.pos
    try:
        meta = json.loads(reader.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable metadata: {e}", path=path, offset=meta_offset) from None

    (count,) = reader.unpack("<I", "tensor count")
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        entry_offset = reader.pos
        (name_len,) = reader.unpack("<H", "tensor name length")
        name = reader.take(name_len, "tensor name").decode("utf-8", errors="replace")
        code, ndim = reader.unpack("<BB", f"header of {name}")
        if code not in _DTYPE_CODES:
            raise FormatError(f"unknown dtype code {code} for {name}", path=path, offset=entry_offset)
        dims = reader.unpack(f"<{ndim}I", f"shape of {name}")
        dtype = _DTYPE_CODES[code]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        payload = reader.take(n_bytes, f"data of {name}")
        if name in tensors:
            raise FormatError(f"duplicate tensor {name}", path=path, offset=entry_offset)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()

    if reader.pos != len(data):
        raise FormatError(f"{len(data) - reader.pos} trailing bytes", path=path, offset=reader.pos)
    return meta, tensors


def write_checkpoint(path, meta: dict, tensors: "OrderedDict[str, np.ndarray]") -> Path:
    """Write atomically: a crash mid-write leaves the previous file intact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(meta, tensors)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    log.debug(f"checkpoint {path.name}: {len(tensors)} tensors, {len(data)} bytes")
    return path


def read_checkpoint(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), path=path)


def checkpoint_stats(path) -> dict:
    """Summary of a checkpoint file for `pvgan info`."""
    path = Path(path)
    if not path.exists():
        return {"exists": False}
    meta, tensors = read_checkpoint(path)
    stats = {"exists": True, "version": CHECKPOINT_VERSION}
    state = meta.get("state", {})
    stats["step"] = state.get("step", 0)
    stats["epoch"] = state.get("epoch", 0)
    stats["prev_accuracy"] = state.get("prev_accuracy", 0.0)
    model = meta.get("config", {}).get("model", {})
    stats["resolution"] = model.get("resolution")
    stats["n_conditions"] = model.get("n_conditions")
    stats["tensors"] = len(tensors)
    for prefix in ("generator", "discriminator"):
        stats[f"{prefix}_values"] = sum(
            t.size for name, t in tensors.items() if name.startswith(prefix + ".")
        )
    stats["optimizer_values"] = sum(t.size for name, t in tensors.items() if name.startswith("optim."))
    stats["file_size_mb"] = round(path.stat().st_size / 1024 / 1024, 2)
    return stats
