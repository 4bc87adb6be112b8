"""Spectral-Galerkin toolkit for a 2D stochastic second-grade fluid:
forward simulation, tangent and backward adjoint solves, and projected
gradient descent for distributed-force optimal control."""

__version__ = "0.1.0"
