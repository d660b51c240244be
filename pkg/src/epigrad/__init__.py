"""Differentiable agent-based epidemic simulation and calibration toolkit."""

__version__ = "0.1.0"
