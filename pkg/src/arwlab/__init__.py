"""Activated Random Walks and Internal DLA on finite sub-stochastic networks."""

__version__ = "0.1.0"
