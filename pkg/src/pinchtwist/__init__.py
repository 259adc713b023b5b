"""Lyapunov spectra of linear cocycles and pinching/twisting simplicity checks."""

__version__ = "0.1.0"
