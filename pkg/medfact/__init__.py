"""Biomedical claim-verification toolkit: synthetic corpus generation, reward scoring,
benchmark evaluation and citation audits."""

__version__ = "0.1.0"
