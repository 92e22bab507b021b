"""Meta-reinforcement learning with exploration-aware estimators."""
__version__ = "0.1.0"
