"""Renewal-event simulator for non-Markovian open quantum dynamics."""

__version__ = "1.0.0"
