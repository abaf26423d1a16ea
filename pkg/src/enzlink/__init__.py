"""Enzyme-assisted diffusive molecular communication link: analysis and simulation."""

__version__ = "0.1.0"
