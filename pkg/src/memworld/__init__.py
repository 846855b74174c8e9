"""Memory-augmented autoregressive world simulation on a toy voxel world."""

__version__ = "0.1.0"
