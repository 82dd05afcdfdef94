"""Staged caption generation: uncertainty estimation, insertion decoding, benchmarking."""

__version__ = "0.1.0"
