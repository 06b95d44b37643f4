"""Shared project utilities for the bending-graphs matcher."""

__all__ = ["config_paths"]
