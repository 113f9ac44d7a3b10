"""Depth-assisted resize-residual GAN for cross-domain aerial segmentation."""

__version__ = "0.1.0"
