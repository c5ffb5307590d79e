"""Automatic warp specialization for tile kernels, plus a simulated Hopper-like SM."""
__version__ = "0.1.0"
