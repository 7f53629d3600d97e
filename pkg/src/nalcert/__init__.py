"""Noisy adversarial learning, smoothing certificates and their numerical checks."""
__version__ = "0.1.0"
