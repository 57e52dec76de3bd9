"""Autonomous recognition of state-detection errors in a BB84 raw key."""
__version__ = "0.1.0"
