"""Model-based deep RL for dynamic portfolio optimization."""

__version__ = "0.1.0"
