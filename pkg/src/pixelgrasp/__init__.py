"""Pixel-wise antipodal grasp prediction pipeline."""

__version__ = "0.1.0"
