"""Correlation spectroscopy of AC fields and nuclear spins with an NV centre and a nuclear memory."""

__version__ = "0.1.0"
