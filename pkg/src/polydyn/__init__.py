"""Multi-headed probabilistic dynamics models with specialized-head planning."""

__version__ = "0.1.0"
