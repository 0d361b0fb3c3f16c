"""Hyperbolic multimodal survival prediction on synthetic bags."""

__version__ = "0.1.0"
