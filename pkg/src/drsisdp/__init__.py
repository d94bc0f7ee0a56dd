"""Sampling-based solvers for semi-infinite SDPs and distributionally robust MPC."""

__version__ = "0.1.0"
