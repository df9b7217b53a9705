"""Braid-valued quasi-morphisms of area-preserving disc diffeomorphisms."""

__version__ = "0.1.0"
