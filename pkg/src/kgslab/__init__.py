"""Radial spectral laboratory for the Klein-Gordon-Schroedinger system."""

__version__ = "0.1.0"
