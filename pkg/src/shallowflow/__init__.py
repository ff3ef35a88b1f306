"""Shallow neural networks with neural-ODE flow-map activations: logarithmic
norm analysis over the diagonal box, minimal-norm stabilization, training and
adversarial experiments, and the approximation upper/lower bounds with
region detection."""

from .backend import COMPILED

__version__ = "0.1.0"

__all__ = ["COMPILED", "__version__"]
