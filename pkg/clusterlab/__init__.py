"""Simulation and verification toolkit for cluster point processes."""

__version__ = "0.1.0"
