"""Fractional inverse simultaneous root finding with kNN Lyapunov-profile tuning."""

__version__ = "0.1.0"
