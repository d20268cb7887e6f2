"""Voxel back projection kernels, cache microbenchmarks and a benchmark harness."""

__version__ = "0.1.0"
