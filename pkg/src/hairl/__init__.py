"""Hierarchical adversarial inverse reinforcement learning with one-step options."""

__version__ = "0.1.0"
