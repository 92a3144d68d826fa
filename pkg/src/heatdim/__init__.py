"""Simulation and numerical checks for the vector stochastic heat equation on the circle."""

__version__ = "0.1.0"
