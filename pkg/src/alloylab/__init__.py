"""Alloy-type random Schroedinger operators on finite lattice boxes."""

__version__ = "0.1.0"
