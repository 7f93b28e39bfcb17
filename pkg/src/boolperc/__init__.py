"""Percolation experiments for Poisson Boolean models with single- and multi-scale radii."""

__version__ = "0.1.0"
