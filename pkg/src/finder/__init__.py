"""Attention-gated message passing networks for materials property prediction."""

__version__ = "0.1.0"
