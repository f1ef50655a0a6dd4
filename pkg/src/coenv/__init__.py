"""Deterministic multi-arm manipulation coordination engine."""

__version__ = "0.1.0"
