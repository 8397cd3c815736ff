"""Densest plane-group packings of convex polygons by entropic trust-region search on the torus."""

__version__ = "0.1.0"
