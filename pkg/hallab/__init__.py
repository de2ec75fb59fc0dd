# hallab/__init__.py

"""Finite-torus laboratory for the Hall response of gapped lattice fermions."""

__version__ = "0.1.0"
