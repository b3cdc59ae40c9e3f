"""Desk-scale aerial visual object search: simulator, agents, and metrics."""

__version__ = "0.1.0"
