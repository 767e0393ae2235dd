"""Synthetic radial power distribution networks on real road geometry."""

__version__ = "0.1.0"
