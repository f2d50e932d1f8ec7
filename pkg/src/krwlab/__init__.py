"""Killed random walks on Z^d: exact escape probabilities, ratio limits,
tree-indexed snakes and killed Brownian motion."""

__version__ = "0.1.0"
