"""
pvgan — Voxel grids and the align/merge operators

A VoxelGrid is an immutable cubic occupancy field indexed (x, y_up, z).
Rotations are quarter turns about the vertical (y) axis, counter-clockwise
when viewed from above, about the geometric centre of the cube. They are pure
index permutations, so aligning samples generated under different conditions
is lossless.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pvgan.config import BINARIZE_THRESHOLD, SUPPORTED_CONDITION_COUNTS
from pvgan.errors import ContractViolation

# Axis pair handed to rot90: turning from z towards x is a +90° turn about y.
# Negative axes so the same pair works on batched (..., X, Y, Z) tensors.
ROTATION_AXES = (-1, -3)


class VoxelGrid:
    """Cubic R×R×R field of occupancy probabilities in [0, 1], stored as float32."""

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float32, copy=True)
        if arr.ndim != 3 or not (arr.shape[0] == arr.shape[1] == arr.shape[2]) or arr.shape[0] < 1:
            raise ContractViolation(f"voxel grid must be a non-empty cube, got shape {arr.shape}")
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ContractViolation("voxel values must lie in [0, 1]")
        arr.setflags(write=False)
        self._values = arr

    @classmethod
    def zeros(cls, resolution: int) -> "VoxelGrid":
        return cls(np.zeros((resolution,) * 3, dtype=np.float32))

    @classmethod
    def ones(cls, resolution: int) -> "VoxelGrid":
        return cls(np.ones((resolution,) * 3, dtype=np.float32))

    @classmethod
    def _trusted(cls, arr: np.ndarray) -> "VoxelGrid":
        # internal fast path for arrays already known to be valid float32 cubes
        grid = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        arr.setflags(write=False)
        grid._values = arr
        return grid

    @property
    def values(self) -> np.ndarray:
        """Read-only view of the underlying array, indexed [x, y, z]."""
        return self._values

    @property
    def resolution(self) -> int:
        return self._values.shape[0]

    @property
    def occupied_count(self) -> int:
        return int(np.count_nonzero(self._values > BINARIZE_THRESHOLD))

    def is_binary(self) -> bool:
        v = self._values
        return bool(np.all((v == 0.0) | (v == 1.0)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self._values.shape == other._values.shape and np.array_equal(self._values, other._values)

    __hash__ = None

    def __repr__(self) -> str:
        return f"VoxelGrid(resolution={self.resolution}, occupied={self.occupied_count})"


@dataclass(frozen=True)
class Condition:
    """Orientation label y. Index i of n stands for a rotation of i·(360/n) degrees."""

    index: int
    n_conditions: int = 2

    def __post_init__(self):
        if self.n_conditions not in SUPPORTED_CONDITION_COUNTS:
            raise ContractViolation(
                f"n_conditions must be one of {SUPPORTED_CONDITION_COUNTS}, got {self.n_conditions}"
            )
        if not 0 <= self.index < self.n_conditions:
            raise ContractViolation(f"condition index {self.index} out of range [0, {self.n_conditions})")

    @property
    def angle_deg(self) -> int:
        return self.index * (360 // self.n_conditions)

    @property
    def quarter_turns(self) -> int:
        return self.index * (4 // self.n_conditions)


def all_conditions(n_conditions: int) -> list[Condition]:
    return [Condition(i, n_conditions) for i in range(n_conditions)]


def rotate_quarter(grid: VoxelGrid, k: int) -> VoxelGrid:
    """Rotate by k·90° about the vertical axis (k taken mod 4)."""
    k = int(k) % 4
    if k == 0:
        return grid
    return VoxelGrid._trusted(np.rot90(grid.values, k, axes=ROTATION_AXES))


def align(samples: Sequence[VoxelGrid], conditions: Sequence[Condition]) -> list[VoxelGrid]:
    """Express every sample in the condition-0 frame by undoing its condition's rotation."""
    if len(samples) != len(conditions):
        raise ContractViolation(f"{len(samples)} samples but {len(conditions)} conditions")
    if not samples:
        raise ContractViolation("align needs at least one sample")
    return [rotate_quarter(s, -c.quarter_turns) for s, c in zip(samples, conditions)]


def merge(aligned: Sequence[VoxelGrid]) -> VoxelGrid:
    """Element-wise mean of already aligned grids."""
    if not aligned:
        raise ContractViolation("merge needs at least one grid")
    resolution = aligned[0].resolution
    for g in aligned[1:]:
        if g.resolution != resolution:
            raise ContractViolation(f"resolution mismatch in merge: {g.resolution} vs {resolution}")
    # float64 accumulation keeps the mean independent of argument order
    stack = np.stack([g.values for g in aligned]).astype(np.float64)
    return VoxelGrid._trusted((stack.sum(axis=0) / len(aligned)).astype(np.float32))


def binarize(grid: VoxelGrid, threshold: float = BINARIZE_THRESHOLD) -> VoxelGrid:
    """1 where the value is strictly above threshold, else 0."""
    if not 0.0 < threshold < 1.0:
        raise ContractViolation(f"threshold must be in (0, 1), got {threshold}")
    return VoxelGrid._trusted((grid.values > threshold).astype(np.float32))


def pad_to_target(grid: VoxelGrid, target: int = 32) -> VoxelGrid:
    """Add a one-voxel zero shell, e.g. ModelNet's 30³ grids become 32³."""
    if grid.resolution != target - 2:
        raise ContractViolation(f"pad_to_target expects resolution {target - 2}, got {grid.resolution}")
    return VoxelGrid._trusted(np.pad(grid.values, 1, mode="constant", constant_values=0.0))


def occupancy(grid: VoxelGrid, threshold: float = BINARIZE_THRESHOLD) -> np.ndarray:
    """Boolean occupancy mask of the strictly binarized grid."""
    return grid.values > threshold
