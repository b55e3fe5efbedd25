"""pvgan — Paired 3D voxel generation with conditional GANs."""
__version__ = "1.1.0"
