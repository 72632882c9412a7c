"""Desk-scale detection transformer: proposal-guided queries, cascade denoising."""

__version__ = "0.1.0"
