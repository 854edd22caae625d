"""Counterfactual sentiment debiasing for review-based rating prediction."""

__version__ = "0.1.0"
