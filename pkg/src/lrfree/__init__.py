"""Learning-rate-free reinforcement learning via online model selection."""
__version__ = "0.1.0"
