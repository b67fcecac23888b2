"""Dual-branch spatial/frequency forgery detector joined by cross-stitch units."""

__version__ = "0.1.0"
