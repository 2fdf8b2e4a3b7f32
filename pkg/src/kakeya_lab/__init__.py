"""Geodesic straightening and Kakeya/Nikodym experiment toolkit."""
__version__ = "0.1.0"
