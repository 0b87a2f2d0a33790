"""Desk-scale benchmarking toolkit for visual defect detection under acquisition shift."""

__version__ = "0.1.0"
