"""
pvgan — Synthetic chair-like objects

Desk-scale stand-in for a ModelNet class: each object is a few solid
axis-aligned boxes (seat, backrest, optional legs/arm) in a canonical
orientation with the backrest on the low-z side, so no object looks the same
after a half turn.
"""

import logging

import numpy as np

from pvgan.data.loader import ConditionedSample
from pvgan.errors import ContractViolation
from pvgan.voxels.grid import VoxelGrid, all_conditions, rotate_quarter

log = logging.getLogger(__name__)

SYNTH_RESOLUTIONS = (8, 16, 32)
MAX_ATTEMPTS = 100


def _box(vol: np.ndarray, x: tuple, y: tuple, z: tuple) -> None:
    vol[x[0]:x[1], y[0]:y[1], z[0]:z[1]] = 1.0


def random_object(rng: np.random.Generator, resolution: int) -> np.ndarray:
    """One object of 2–4 boxes: seat + backrest, plus up to two extras."""
    r = resolution
    m = max(1, r // 8)          # margin to the grid border
    t = max(1, r // 8)          # slab thickness
    vol = np.zeros((r, r, r), dtype=np.float32)

    x0 = int(rng.integers(m, r // 4 + 1))
    x1 = int(rng.integers(3 * r // 4, r - m + 1))
    z0 = int(rng.integers(m, r // 4 + 1))
    z1 = int(rng.integers(3 * r // 4, r - m + 1))
    seat_y = int(rng.integers(r // 4, r // 2))
    top = int(rng.integers(3 * r // 4, r - m + 1))

    _box(vol, (x0, x1), (seat_y, seat_y + t), (z0, z1))            # seat
    _box(vol, (x0, x1), (seat_y, top), (z0, z0 + t))               # backrest

    extras = int(rng.integers(0, 3))
    kinds = rng.permutation(3)[:extras]
    for kind in kinds:
        if kind == 0:   # front legs as a bar under the front edge
            _box(vol, (x0, x1), (m, seat_y), (z1 - t, z1))
        elif kind == 1:  # central pedestal
            cx = (x0 + x1) // 2
            cz = (z0 + z1) // 2
            _box(vol, (cx - t // 2, cx - t // 2 + t), (m, seat_y), (cz - t // 2, cz - t // 2 + t))
        else:           # one armrest, on the low-x side
            arm_top = min(seat_y + t + max(1, r // 6), r - m)
            _box(vol, (x0, x0 + t), (seat_y, arm_top), (z0, z1))
    return vol


def is_rotation_asymmetric(vol: np.ndarray, n_conditions: int) -> bool:
    """True when every non-trivial condition rotation changes the object."""
    grid = VoxelGrid._trusted(vol)
    turns = (2,) if n_conditions == 2 else (1, 2, 3)
    return all(rotate_quarter(grid, k) != grid for k in turns)


def synth_dataset(count: int, resolution: int, n_conditions: int, seed: int) -> list[ConditionedSample]:
    """`count` objects, each emitted under every condition; deterministic in seed."""
    if resolution not in SYNTH_RESOLUTIONS:
        raise ContractViolation(f"synthetic resolution must be one of {SYNTH_RESOLUTIONS}, got {resolution}")
    if count < 0:
        raise ContractViolation(f"count must be ≥ 0, got {count}")
    rng = np.random.default_rng(seed)
    conditions = all_conditions(n_conditions)
    samples = []
    for i in range(count):
        for _ in range(MAX_ATTEMPTS):
            vol = random_object(rng, resolution)
            if is_rotation_asymmetric(vol, n_conditions):
                break
        else:
            raise RuntimeError(f"could not draw an asymmetric object in {MAX_ATTEMPTS} attempts")
        base = VoxelGrid._trusted(vol)
        source_id = f"synth-{i:05d}"
        for cond in conditions:
            samples.append(ConditionedSample(rotate_quarter(base, cond.quarter_turns), cond, source_id))
    log.debug(f"synthetic dataset: {count} objects × {n_conditions} conditions at {resolution}³")
    return samples
