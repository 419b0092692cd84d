"""Hybrid ad-hoc/cellular ITS messaging simulator and component library."""

__version__ = "0.1.0"
