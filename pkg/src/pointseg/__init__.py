"""Weakly supervised 3D segmentation from six extreme-point clicks."""

__version__ = "0.1.0"
