"""Semantic-graph lidar registration with learned cross-graph attention."""

__version__ = "0.1.0"
