"""Simulation toolkit for the two-dimensional discrete Gaussian free field: exact Green
functions, samplers, the concentric decomposition, extreme-value statistics, glassy
Gibbs measures and random-walk/Brownian curve estimates."""

__version__ = "0.1.0"
