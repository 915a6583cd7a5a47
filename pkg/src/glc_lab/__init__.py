"""Discrete Carleman, observability and penalized HUM lab for the Ginzburg-Landau equation."""

__version__ = "0.1.0"
