"""Gevrey well-posedness diagnostics for weakly hyperbolic first order systems."""

__version__ = "0.1.0"
