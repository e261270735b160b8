"""Quasi-Bayesian sieve estimation for conditional moment restricted models."""

__version__ = "0.1.0"
