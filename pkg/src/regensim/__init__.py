"""Regenerative simulation of Markov processes with polynomial drift."""

__version__ = "0.1.0"
