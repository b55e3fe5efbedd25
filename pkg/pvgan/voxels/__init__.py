# pvgan.voxels — Voxel grids, quarter-turn alignment, merging and grid file formats
