"""Engel-seeded LWE toolkit with crypto-agility, noise analysis, wiretap rates and a zero-trust broker."""

__version__ = "0.1.0"
