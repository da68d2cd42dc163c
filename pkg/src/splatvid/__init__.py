"""Video representation with dynamic Gaussian splats."""

__version__ = "0.1.0"
