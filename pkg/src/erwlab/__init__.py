"""Simulation and numerical checks for excited random walks with long
backward jumps and their multi-type branching structure."""

__version__ = "0.1.0"
