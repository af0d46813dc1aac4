"""Conical energy constructions: a Lipschitz-graph union with large mean
energy, a Cantor-type ball measure with divergent energy, and a certified
cone-mass engine for both."""

__version__ = "0.1.0"
