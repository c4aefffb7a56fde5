"""Landslide mapping from SAR/optical composites with a from-scratch CNN."""

__version__ = "0.1.0"
