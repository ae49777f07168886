# Multi-fidelity Gaussian process classification
__version__ = "1.0.0"
