"""Stochastic MPC with fail-safe trajectories for highway driving."""

__version__ = "0.1.0"
