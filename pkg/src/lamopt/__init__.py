"""Laminate-based topology optimisation with neural surrogate seeding."""

__version__ = "0.1.0"
