"""Bubble detection and dating with mixed causal-noncausal autoregressions."""

__version__ = "0.1.0"
