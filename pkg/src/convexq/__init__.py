"""Simulated block-encoding pipeline for testing polynomial convexity."""

__version__ = "0.1.0"
