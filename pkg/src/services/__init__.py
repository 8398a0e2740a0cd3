"""Geometry, sampling, matching, fusion and benchmark harness modules."""
