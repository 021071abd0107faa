"""Hierarchical visual foresight on a continuous 2D maze."""

__version__ = "0.1.0"
