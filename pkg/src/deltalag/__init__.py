"""Learned, time-varying lead-lag detection for cross-sectional stock ranking."""
__version__ = "0.1.0"
