"""Geolocation as classification over adaptive hierarchical sphere cells."""

__version__ = "0.1.0"
