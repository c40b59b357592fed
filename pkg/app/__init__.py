"""Neuroevolution test generation for block-based mini games."""

__version__ = "1.0.0"
