"""Latent-variable model from a frozen diffusion prior and a time-dependent encoder,
combined through the Bayes rule for scores."""

from .diffproc import SdeSpec

__all__ = ["SdeSpec"]
__version__ = "0.1.0"
