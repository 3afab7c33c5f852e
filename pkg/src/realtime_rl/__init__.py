"""Real-time interaction simulator for asynchronous MDPs."""

__version__ = "0.1.0"
