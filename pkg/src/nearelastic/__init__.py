"""Simulation and analysis of nearly-elastic multi-well particle systems."""

__version__ = "0.1.0"
