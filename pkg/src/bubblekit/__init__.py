"""Numerical toolkit for bubbling solutions of mean field equations on the flat torus and the unit disk."""

__version__ = "0.1.0"
