"""Depth-sweep runtime code."""
