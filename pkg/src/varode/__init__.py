"""Variational ODEs, generalized Wilczynski invariants and rank-2 distributions."""

__version__ = "0.1.0"
