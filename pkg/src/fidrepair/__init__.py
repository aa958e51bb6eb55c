"""Fusion-in-Decoder vulnerability repair: data handling, model, knowledge base and evaluation."""

__version__ = "0.1.0"
