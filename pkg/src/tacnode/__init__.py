"""Correlation kernels, Fredholm determinants and exact Monte Carlo for
non-intersecting Brownian bridges conditioned to stay below a threshold."""

__version__ = "0.1.0"
