"""Causality-aware next-location prediction on stratified mobility data."""

__version__ = "0.1.0"
