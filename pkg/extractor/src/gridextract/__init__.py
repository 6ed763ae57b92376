"""Per-layer sentence-embedding grid extraction from causal language models."""

__version__ = "0.1.0"
