"""Explainable session-based recommendation by reinforcement-learned knowledge-graph path reasoning."""

__version__ = "0.1.0"
