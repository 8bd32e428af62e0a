"""Empirical Bayes via goodness-of-fit."""
__version__ = "0.1.0"
