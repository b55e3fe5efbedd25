"""
pvgan — PNG previews of voxel grids

matplotlib is imported lazily so the rest of the package works without it.
"""

import logging
from pathlib import Path

from pvgan.config import BINARIZE_THRESHOLD
from pvgan.voxels.grid import VoxelGrid, binarize

log = logging.getLogger(__name__)


def render_png(grid: VoxelGrid, path, threshold: float = BINARIZE_THRESHOLD, title: str = None) -> Path:
    """Draw the binarized grid as cubes and save it to `path`."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    occ = binarize(grid, threshold).values > 0
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(111, projection="3d")
    # matplotlib draws its third axis upwards; our up axis is y
    ax.voxels(occ.transpose(0, 2, 1), facecolors="#8fa9c8", edgecolor="k", linewidth=0.2)
    r = grid.resolution
    ax.set_xlim(0, r)
    ax.set_ylim(0, r)
    ax.set_zlim(0, r)
    ax.set_xlabel("x")
    ax.set_ylabel("z")
    ax.set_zlabel("y")
    if title:
        ax.set_title(title)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    log.debug(f"preview written: {path}")
    return path
