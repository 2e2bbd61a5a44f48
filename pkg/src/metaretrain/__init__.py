"""Metamorphic robustness testing and semi-supervised retraining for image classifiers."""

__version__ = "0.1.0"
