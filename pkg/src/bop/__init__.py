"""Bag of Policies: an ensemble of distributional actor-critics with per-episode head sampling."""

__version__ = "0.1.0"
